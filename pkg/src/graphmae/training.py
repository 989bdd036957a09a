"""Adam, cosine learning-rate decay and the masked-autoencoder pretraining loop."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .errors import NonFiniteError, ValidationError
from .graph import Graph, GraphSet, merge_graphs
from .layers import GraphContext, Model, decode, decoder_configs, encode, encoder_configs
from .loss import LossConfig, reconstruction_loss
from .masking import MaskConfig, MaskPlan, MaskTokens, apply_input_mask, remask, sample_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    max_epoch: int = 200

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {b}")
        if self.weight_decay < 0 or self.max_epoch < 0:
            raise ValidationError("weight_decay and max_epoch must be nonnegative")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, state: AdamState, lr: float, cfg: OptimConfig, grads=None):
    """One Adam update with decoupled weight decay, in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``.
    """
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for i, p in enumerate(params):
        g = p.grad if grads is None else grads[i]
        key = p.name
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        if cfg.weight_decay:
            p.data -= lr * cfg.weight_decay * p.data
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def cosine_lr(t: float, max_epoch: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * t / T)), no warmup."""
    if max_epoch <= 0:
        raise ValidationError("cosine schedule needs max_epoch > 0")
    if not 0 <= t <= max_epoch:
        raise ValidationError(f"epoch {t} outside [0, {max_epoch}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / max_epoch))


@dataclass(frozen=True)
class RunConfig:
    mask: MaskConfig = MaskConfig(0.5, 0.05)
    loss: LossConfig = LossConfig("sce", 3.0)
    optim: OptimConfig = OptimConfig()
    encoder_kind: str = "gat"
    decoder_kind: str = "gat"
    hidden_size: int = 64
    num_layers: int = 2
    heads: int = 4
    out_heads: int = 1
    negative_slope: float = 0.2
    remask: bool = True
    batch_size: int = 32
    seed: int = 0

    def encoder_layers(self, feature_dim):
        return encoder_configs(self.encoder_kind, feature_dim, self.hidden_size, self.num_layers,
                               self.heads if self.encoder_kind == "gat" else 1, self.negative_slope)

    def decoder_layers(self, feature_dim):
        return decoder_configs(self.decoder_kind, self.hidden_size, feature_dim,
                               self.out_heads if self.decoder_kind == "gat" else 1, self.negative_slope)

    @property
    def uses_remask(self) -> bool:
        # an MLP decoder would see only [DMASK] on the rows it must reconstruct
        return self.remask and self.decoder_kind != "mlp"

    def with_seed(self, seed) -> "RunConfig":
        return replace(self, seed=int(seed))


@dataclass
class GraphMAE:
    """Encoder, decoder and the two mask tokens."""

    encoder: Model
    decoder: Model
    tokens: MaskTokens

    @classmethod
    def init(cls, feature_dim: int, run: RunConfig) -> "GraphMAE":
        enc = Model(run.encoder_layers(feature_dim), "encoder", seed=[run.seed, 1])
        dec = Model(run.decoder_layers(feature_dim), "decoder", seed=[run.seed, 2])
        code_dim = enc.out_dim if enc.out_dim is not None else feature_dim
        return cls(enc, dec, MaskTokens.init(feature_dim, code_dim, seed=[run.seed, 3]))

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters() + self.tokens.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def architecture(self) -> dict:
        return {
            "format": "graphmae-architecture/1",
            "encoder": self.encoder.architecture(),
            "decoder": self.decoder.architecture(),
            "tokens": {
                "feature_dim": self.tokens.x_mask.shape[1],
                "code_dim": self.tokens.h_dmask.shape[1],
            },
        }

    @classmethod
    def from_architecture(cls, doc: dict) -> "GraphMAE":
        try:
            enc = Model.from_architecture(doc["encoder"])
            dec = Model.from_architecture(doc["decoder"])
            tok = doc["tokens"]
            tokens = MaskTokens.init(int(tok["feature_dim"]), int(tok["code_dim"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed architecture document: {exc}") from None
        return cls(enc, dec, tokens)


def masked_reconstruction_loss(model: GraphMAE, ctx: GraphContext, x: Tensor, plan: MaskPlan,
                               run: RunConfig) -> Tensor:
    """mask -> encode -> re-mask -> decode -> criterion on the masked rows."""
    x_tilde = apply_input_mask(x, plan, model.tokens)
    h = encode(model.encoder, ctx, x_tilde)
    if run.uses_remask:
        h = remask(h, plan, model.tokens)
    z = decode(model.decoder, ctx, h)
    return reconstruction_loss(x, z, plan, run.loss)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, loss, lr)

    def append(self, epoch, loss, lr):
        self.rows.append((int(epoch), float(loss), float(lr)))

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss,lr\n")
        for epoch, loss, lr in self.rows:
            buf.write(f"{epoch},{loss!r},{lr!r}\n")
        return buf.getvalue()

    def __len__(self):
        return len(self.rows)


class TrainingDivergedError(NonFiniteError):
    def __init__(self, epoch, norms, cause):
        self.epoch = epoch
        self.parameter_norms = norms
        worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:3]
        summary = ", ".join(f"{k}={v:.3g}" for k, v in worst)
        super().__init__(f"non-finite value at epoch {epoch} ({cause}); largest parameter norms: {summary}")


@dataclass
class PretrainResult:
    model: GraphMAE
    log: TrainLog


def _step(model, params, state, ctx, x, plan, run, lr, epoch):
    for p in params:
        p.zero_grad()
    try:
        with Tape() as tape:
            loss = masked_reconstruction_loss(model, ctx, x, plan, run)
        ad.backward(tape, loss)
        if not all(np.all(np.isfinite(p.grad)) for p in params):
            raise NonFiniteError("non-finite gradient")
        adam_step(params, state, lr, run.optim)
    except NonFiniteError as exc:
        norms = {p.name: float(np.linalg.norm(p.data)) for p in params}
        raise TrainingDivergedError(epoch, norms, exc) from exc
    return loss.item()


def epoch_rng(seed, epoch, *extra) -> np.random.Generator:
    return np.random.default_rng([int(seed), 100, int(epoch), *extra])


def pretrain(data: Union[Graph, GraphSet], run: RunConfig, model: Optional[GraphMAE] = None) -> PretrainResult:
    """Self-supervised training; full-graph for a Graph, mini-batched for a GraphSet.

    A new mask plan is drawn for every step from a generator derived from
    (run.seed, epoch[, batch]), so runs are reproducible bit for bit.
    """
    feature_dim = data.num_features
    if model is None:
        model = GraphMAE.init(feature_dim, run)
    params = model.parameters()
    state = AdamState()
    log_ = TrainLog()
    T = run.optim.max_epoch
    if isinstance(data, Graph):
        ctx = GraphContext(data)
        x = Tensor(data.features)
        for epoch in range(T):
            lr = cosine_lr(epoch, T, run.optim.lr)
            plan = sample_mask(data.n, run.mask, rng=epoch_rng(run.seed, epoch))
            if len(plan) == 0:
                log_.append(epoch, float("nan"), lr)
                continue
            loss = _step(model, params, state, ctx, x, plan, run, lr, epoch)
            log_.append(epoch, loss, lr)
            log.debug("epoch %d loss %.6f lr %.3g", epoch, loss, lr)
        return PretrainResult(model, log_)

    graphs = data.graphs
    bs = max(1, int(run.batch_size))
    for epoch in range(T):
        lr = cosine_lr(epoch, T, run.optim.lr)
        order = np.random.default_rng([int(run.seed), 200, epoch]).permutation(len(graphs))
        losses = []
        for b, start in enumerate(range(0, len(graphs), bs)):
            batch, _ = merge_graphs([graphs[i] for i in order[start:start + bs]])
            plan = sample_mask(batch.n, run.mask, rng=epoch_rng(run.seed, epoch, b))
            if len(plan) == 0:
                continue
            losses.append(_step(model, params, state, GraphContext(batch), Tensor(batch.features),
                                plan, run, lr, epoch))
        log_.append(epoch, float(np.mean(losses)) if losses else float("nan"), lr)
    return PretrainResult(model, log_)
