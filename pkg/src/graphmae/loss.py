"""Reconstruction criteria evaluated on the masked rows only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .masking import MaskPlan

CRITERIA = ("sce", "mse")


@dataclass(frozen=True)
class LossConfig:
    criterion: str = "sce"
    gamma: float = 3.0
    eps_norm: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "criterion", self.criterion.lower())
        if self.criterion not in CRITERIA:
            raise ValidationError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.gamma < 1:
            raise ValidationError(f"gamma must be >= 1, got {self.gamma}")
        if self.eps_norm <= 0:
            raise ValidationError("eps_norm must be positive")


def _masked_pair(x, z, plan: MaskPlan):
    if x.shape != z.shape:
        raise ValidationError(f"target {x.shape} and reconstruction {z.shape} differ in shape")
    if len(plan) == 0:
        raise ValidationError("loss is undefined over an empty mask plan")
    x_np = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return x_np[plan.masked], ad.gather_rows(z, plan.masked)


def cosine_error_rows(x, z: Tensor, eps_norm=1e-12) -> Tensor:
    """Per-row 1 - cos(x_i, z_i) as an m x 1 column; x is constant data."""
    cos = ad.cosine_rows(x, z, eps_norm)
    return ad.add(ad.scale(cos, -1.0), 1.0)


def sce_loss(x, z: Tensor, plan: MaskPlan, cfg: LossConfig = LossConfig()) -> Tensor:
    """Scaled cosine error: mean over masked rows of (1 - cos(x_i, z_i)) ** gamma."""
    x_m, z_m = _masked_pair(x, z, plan)
    err = cosine_error_rows(x_m, z_m, cfg.eps_norm)
    if not float(cfg.gamma).is_integer():
        # 1 - cos can round a hair below zero; a fractional power needs base >= 0
        err = ad.leaky_relu(err, 0.0)
    return ad.mean(ad.power(err, cfg.gamma))


def mse_loss(x, z: Tensor, plan: MaskPlan) -> Tensor:
    """Mean over masked rows of the per-row mean squared error."""
    x_m, z_m = _masked_pair(x, z, plan)
    diff = ad.add(z_m, Tensor(-x_m))
    return ad.mean(ad.mul(diff, diff))


def reconstruction_loss(x, z: Tensor, plan: MaskPlan, cfg: LossConfig) -> Tensor:
    if cfg.criterion == "sce":
        return sce_loss(x, z, plan, cfg)
    return mse_loss(x, z, plan)
