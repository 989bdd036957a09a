"""Mask sampling, input corruption and re-masking of latent codes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, Tensor
from .errors import ValidationError
from .layers import xavier_uniform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskConfig:
    mask_ratio: float = 0.5
    replace_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("mask_ratio", "replace_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class MaskPlan:
    """Masked node set plus the subset substituted with donor features.

    ``masked`` is sorted. ``substituted`` is a sorted subset of ``masked`` and
    ``donors[k]`` is the node whose raw features replace ``substituted[k]``.
    """

    n: int
    masked: np.ndarray
    substituted: np.ndarray
    donors: np.ndarray

    @classmethod
    def empty(cls, n) -> "MaskPlan":
        z = np.zeros(0, dtype=np.int64)
        return cls(n, z, z, z)

    @property
    def token_rows(self) -> np.ndarray:
        """Masked rows that receive the [MASK] token (masked minus substituted)."""
        return np.setdiff1d(self.masked, self.substituted, assume_unique=True)

    @property
    def substitution_source(self) -> dict[int, int]:
        return dict(zip(self.substituted.tolist(), self.donors.tolist()))

    def __len__(self):
        return len(self.masked)


def _partial_fisher_yates(rng, n, k) -> np.ndarray:
    """First ``k`` entries of a uniformly shuffled ``arange(n)``."""
    perm = np.arange(n, dtype=np.int64)
    if k:
        draws = rng.integers(np.arange(k), n)
        kernels.partial_shuffle(perm, draws)
    return perm[:k]


def sample_mask(n: int, cfg: MaskConfig, rng=None) -> MaskPlan:
    """Uniform sampling without replacement of ``floor(mask_ratio * n)`` nodes.

    ``rng`` overrides the generator seeded from ``cfg.seed`` (the training loop
    passes one generator per epoch).
    """
    if n < 1:
        raise ValidationError("sample_mask needs at least one node")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    num_mask = math.floor(cfg.mask_ratio * n)
    if num_mask == 0:
        log.warning("mask ratio %.3f masks no nodes out of %d; the loss is undefined", cfg.mask_ratio, n)
        return MaskPlan.empty(n)
    chosen = _partial_fisher_yates(rng, n, num_mask)
    masked = np.sort(chosen)
    num_sub = math.floor(cfg.replace_rate * num_mask)
    if num_sub:
        pick = _partial_fisher_yates(rng, num_mask, num_sub)
        order = np.argsort(masked[pick])
        substituted = masked[pick][order]
        donors = rng.integers(0, n, size=num_sub)[order]
    else:
        substituted = donors = np.zeros(0, dtype=np.int64)
    return MaskPlan(n, masked, substituted, donors.astype(np.int64))


@dataclass
class MaskTokens:
    """Learnable [MASK] (feature space) and [DMASK] (code space) vectors."""

    x_mask: Parameter
    h_dmask: Parameter

    @classmethod
    def init(cls, feature_dim, code_dim, seed=0) -> "MaskTokens":
        rng = np.random.default_rng(seed)
        return cls(
            Parameter(xavier_uniform(rng, 1, feature_dim), "tokens.x_mask"),
            Parameter(xavier_uniform(rng, 1, code_dim), "tokens.h_dmask"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.x_mask, self.h_dmask]


def _check_plan(plan: MaskPlan, n: int):
    if plan.n != n:
        raise ValidationError(f"mask plan is for {plan.n} nodes, tensor has {n} rows")
    for arr in (plan.masked, plan.donors):
        if len(arr) and (arr.min() < 0 or arr.max() >= n):
            raise ValidationError(f"mask plan index out of range [0, {n})")


def apply_input_mask(x: Tensor, plan: MaskPlan, tokens: MaskTokens) -> Tensor:
    """X~: token rows get [MASK], substituted rows get their donor's raw row."""
    _check_plan(plan, x.shape[0])
    if tokens.x_mask.shape != (1, x.shape[1]):
        raise ValidationError(f"[MASK] token shape {tokens.x_mask.shape} does not fit features {x.shape}")
    if len(plan) == 0:
        return x
    out = x
    token_rows = plan.token_rows
    if len(token_rows):
        fill = ad.gather_rows(tokens.x_mask, np.zeros(len(token_rows), dtype=np.int64))
        out = ad.scatter_rows(out, token_rows, fill)
    if len(plan.substituted):
        # donor rows are read from the uncorrupted input
        out = ad.scatter_rows(out, plan.substituted, ad.gather_rows(x, plan.donors))
    return out


def remask(h: Tensor, plan: MaskPlan, tokens: MaskTokens) -> Tensor:
    """H~: every masked row (substituted ones included) becomes [DMASK]."""
    _check_plan(plan, h.shape[0])
    if tokens.h_dmask.shape != (1, h.shape[1]):
        raise ValidationError(f"[DMASK] token shape {tokens.h_dmask.shape} does not fit codes {h.shape}")
    if len(plan) == 0:
        return h
    fill = ad.gather_rows(tokens.h_dmask, np.zeros(len(plan), dtype=np.int64))
    return ad.scatter_rows(h, plan.masked, fill)
