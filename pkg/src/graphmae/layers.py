"""GCN / GAT / GIN / MLP layers and the encoder and decoder stacks built from them.

Layers read their adjacency from a :class:`GraphContext`, which precomputes
the three variants the layer kinds need: the loop-free unit adjacency (GIN), the
adjacency with self-loops (GAT) and its symmetric normalization (GCN).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, Tensor
from .errors import ValidationError
from .graph import Graph, add_self_loops, gcn_normalize, remove_self_loops

KINDS = ("gcn", "gat", "gin", "mlp")
ACTIVATIONS = ("prelu", "identity")


@dataclass(frozen=True)
class LayerConfig:
    """One layer. For GAT ``out_dim`` is the per-head width; the layer emits
    ``heads * out_dim`` columns when ``concat`` and ``out_dim`` otherwise."""

    kind: str
    in_dim: int
    out_dim: int
    heads: int = 1
    concat: bool = True
    negative_slope: float = 0.2
    activation: str = "prelu"
    learn_eps: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0 or self.heads < 1:
            raise ValidationError(f"layer dims and heads must be positive: {self}")
        if self.kind != "gat" and self.heads != 1:
            raise ValidationError(f"only GAT layers take heads, got heads={self.heads} for {self.kind}")

    @property
    def output_dim(self) -> int:
        if self.kind == "gat" and self.concat:
            return self.heads * self.out_dim
        return self.out_dim


class GraphContext:
    """Adjacency variants of one graph, built once and shared by every layer."""

    def __init__(self, g: Graph):
        self.graph = g
        self.n = g.n
        # GIN sums neighbors unweighted, like GCN and GAT ignore edge values
        raw = remove_self_loops(g).adjacency
        self.raw = raw.with_values(np.ones(raw.num_arcs))
        self.with_loops = add_self_loops(g).adjacency
        self.gcn = gcn_normalize(self.with_loops)
        self.loop_rows = self.with_loops.arc_rows()

    @classmethod
    def of(cls, g) -> "GraphContext":
        return g if isinstance(g, GraphContext) else cls(g)


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Layer:
    def __init__(self, cfg: LayerConfig, prefix: str, rng: np.random.Generator):
        self.cfg = cfg
        self.prefix = prefix
        self.params: dict[str, Parameter] = {}
        getattr(self, f"_init_{cfg.kind}")(rng)
        if cfg.activation == "prelu":
            self._param("act_slope", np.full((1, cfg.output_dim), 0.25))

    def _param(self, name, value) -> Parameter:
        p = Parameter(value, f"{self.prefix}.{name}")
        self.params[name] = p
        return p

    def _init_gcn(self, rng):
        c = self.cfg
        self._param("weight", xavier_uniform(rng, c.in_dim, c.out_dim))

    def _init_mlp(self, rng):
        c = self.cfg
        self._param("weight", xavier_uniform(rng, c.in_dim, c.out_dim))
        self._param("bias", np.zeros((1, c.out_dim)))

    def _init_gat(self, rng):
        c = self.cfg
        for k in range(c.heads):
            self._param(f"head{k}.weight", xavier_uniform(rng, c.in_dim, c.out_dim))
            self._param(f"head{k}.att_src", np.zeros((c.out_dim, 1)))
            self._param(f"head{k}.att_dst", np.zeros((c.out_dim, 1)))

    def _init_gin(self, rng):
        c = self.cfg
        self._param("mlp0.weight", xavier_uniform(rng, c.in_dim, c.out_dim))
        self._param("mlp0.bias", np.zeros((1, c.out_dim)))
        self._param("mlp_slope", np.full((1, c.out_dim), 0.25))
        self._param("mlp1.weight", xavier_uniform(rng, c.out_dim, c.out_dim))
        self._param("mlp1.bias", np.zeros((1, c.out_dim)))
        if c.learn_eps:
            self._param("eps", np.zeros((1, 1)))
        else:
            self.fixed_eps = 0.0

    def __call__(self, h: Tensor, ctx: GraphContext) -> Tensor:
        if h.shape[1] != self.cfg.in_dim:
            raise ValidationError(
                f"{self.prefix}: expected {self.cfg.in_dim} input columns, got {h.shape[1]}"
            )
        out = getattr(self, f"_forward_{self.cfg.kind}")(h, ctx)
        if self.cfg.activation == "prelu":
            out = ad.prelu(out, self.params["act_slope"])
        return out

    def _forward_gcn(self, h, ctx):
        return ad.spmm(ctx.gcn, h) @ self.params["weight"]

    def _forward_mlp(self, h, ctx):
        return h @ self.params["weight"] + self.params["bias"]

    def _forward_gat(self, h, ctx):
        c, p = self.cfg, self.params
        adj = ctx.with_loops
        heads = []
        for k in range(c.heads):
            wh = h @ p[f"head{k}.weight"]
            score_dst = wh @ p[f"head{k}.att_dst"]
            score_src = wh @ p[f"head{k}.att_src"]
            logits = ad.gather_rows(score_dst, ctx.loop_rows) + ad.gather_rows(score_src, adj.col_indices)
            alpha = ad.segment_softmax(ad.leaky_relu(logits, c.negative_slope), adj.row_offsets)
            heads.append(ad.spmm(adj, wh, values=alpha))
        if len(heads) == 1:
            return heads[0]
        if c.concat:
            return ad.concat_cols(heads)
        total = heads[0]
        for extra in heads[1:]:
            total = total + extra
        return ad.scale(total, 1.0 / len(heads))

    def _forward_gin(self, h, ctx):
        p = self.params
        eps = p.get("eps")
        if eps is None:
            self_term = ad.scale(h, 1.0 + self.fixed_eps)
        else:
            self_term = ad.mul(h, eps + 1.0)
        agg = self_term + ad.spmm(ctx.raw, h)
        hidden = ad.prelu(agg @ p["mlp0.weight"] + p["mlp0.bias"], p["mlp_slope"])
        return hidden @ p["mlp1.weight"] + p["mlp1.bias"]

    def attention(self, h: Tensor, ctx: GraphContext) -> list[np.ndarray]:
        """Per-head attention coefficients (one value per self-looped arc)."""
        if self.cfg.kind != "gat":
            raise ValidationError("attention() is only defined for GAT layers")
        out = []
        p = self.params
        for k in range(self.cfg.heads):
            wh = h.data @ p[f"head{k}.weight"].data
            logits = (wh @ p[f"head{k}.att_dst"].data)[ctx.loop_rows] + (
                wh @ p[f"head{k}.att_src"].data
            )[ctx.with_loops.col_indices]
            logits = np.where(logits > 0, logits, self.cfg.negative_slope * logits)
            out.append(kernels.segment_softmax(ctx.with_loops.row_offsets, logits)[:, 0])
        return out


class Model:
    """An ordered stack of layers acting as the encoder or the decoder."""

    def __init__(self, configs, role: str, seed: int = 0):
        if role not in ("encoder", "decoder"):
            raise ValidationError(f"role must be 'encoder' or 'decoder', got {role!r}")
        configs = list(configs)
        for prev, nxt in zip(configs, configs[1:]):
            if prev.output_dim != nxt.in_dim:
                raise ValidationError(
                    f"layer output {prev.output_dim} does not feed next layer input {nxt.in_dim}"
                )
        self.role = role
        self.configs = configs
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.layers = [Layer(c, f"{role}.{i}.{c.kind}", rng) for i, c in enumerate(configs)]

    @property
    def in_dim(self) -> Optional[int]:
        return self.configs[0].in_dim if self.configs else None

    @property
    def out_dim(self) -> Optional[int]:
        return self.configs[-1].output_dim if self.configs else None

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params.values()]

    def forward(self, h: Tensor, g) -> Tensor:
        ctx = GraphContext.of(g)
        if h.shape[0] != ctx.n:
            raise ValidationError(f"input has {h.shape[0]} rows for a {ctx.n}-node graph")
        for layer in self.layers:
            h = layer(h, ctx)
        return h

    def architecture(self) -> dict:
        return {"role": self.role, "layers": [asdict(c) for c in self.configs]}

    @classmethod
    def from_architecture(cls, doc: dict, seed: int = 0) -> "Model":
        return cls([LayerConfig(**c) for c in doc["layers"]], doc["role"], seed)


def encode(model: Model, g, x_in: Tensor) -> Tensor:
    """Encoder pass H = f_E(A, X~)."""
    if model.role != "encoder":
        raise ValidationError(f"encode() needs an encoder, got a {model.role}")
    return model.forward(x_in, g)


def decode(model: Model, g, h_tilde: Tensor) -> Tensor:
    """Decoder pass Z = f_D(A, H~). MLP layers ignore the adjacency."""
    if model.role != "decoder":
        raise ValidationError(f"decode() needs a decoder, got a {model.role}")
    return model.forward(h_tilde, g)


def encoder_configs(kind, in_dim, hidden, num_layers=2, heads=4, negative_slope=0.2) -> list[LayerConfig]:
    """Hidden-layer stack: every layer emits ``hidden`` columns with PReLU.

    GAT layers split ``hidden`` evenly across concatenated heads.
    """
    configs = []
    dim = in_dim
    for _ in range(num_layers):
        if kind == "gat":
            if hidden % heads:
                raise ValidationError(f"hidden size {hidden} is not divisible by {heads} heads")
            configs.append(LayerConfig("gat", dim, hidden // heads, heads=heads, concat=True,
                                       negative_slope=negative_slope))
        else:
            configs.append(LayerConfig(kind, dim, hidden))
        dim = hidden
    return configs


def decoder_configs(kind, hidden, out_dim, heads=1, negative_slope=0.2) -> list[LayerConfig]:
    """Single output layer mapping codes back to feature space, identity activation."""
    if kind == "gat":
        return [LayerConfig("gat", hidden, out_dim, heads=heads, concat=False,
                            negative_slope=negative_slope, activation="identity")]
    return [LayerConfig(kind, hidden, out_dim, activation="identity")]
