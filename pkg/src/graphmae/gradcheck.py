"""Finite-difference verification of every differentiable piece.

Each registered check builds a scalar function of some leaf arrays, takes its
analytic gradient through the tape, and compares against central differences
(h = 1e-6). The error of a check is

    max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8)

over every leaf entry. Primitives and losses must stay below 1e-5, layers and
the end-to-end model below 1e-4. Near-antiparallel SCE rows put the loss near
2^gamma, where central-difference roundoff (~eps * |f| / h) alone reaches a
few 1e-6 relative on small gradient entries; the tighter loss bound is tested
against a high-precision oracle instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import CsrAdjacency, FeatureSpec, Graph, generate_sbm
from .layers import GraphContext, Layer, LayerConfig
from .loss import LossConfig, mse_loss, sce_loss
from .masking import MaskConfig, MaskPlan, sample_mask
from .training import GraphMAE, OptimConfig, RunConfig, masked_reconstruction_loss

FD_STEP = 1e-6
PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8), initial=0.0))


def numeric_gradient(f: Callable[[], float], arrays, h=FD_STEP) -> list[np.ndarray]:
    """Central differences of ``f`` w.r.t. each array, perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def check_function(build: Callable[..., Tensor], leaves) -> float:
    """Compare tape gradients of ``build(*leaves)`` (a 1x1 tensor) with finite differences."""
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.grad = None
    with Tape() as tape:
        loss = build(*leaves)
    ad.backward(tape, loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    def f():
        with ad.no_grad():
            return build(*leaves).item()

    numeric = numeric_gradient(f, [t.data for t in leaves])
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def check_parameters(build: Callable[[], Tensor], params) -> float:
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build()
    ad.backward(tape, loss)
    analytic = [p.grad.copy() for p in params]

    def f():
        with ad.no_grad():
            return build().item()

    numeric = numeric_gradient(f, [p.data for p in params])
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


@dataclass(frozen=True)
class Check:
    name: str
    kind: str  # primitive / layer / loss / model
    threshold: float
    run: Callable[[np.random.Generator], float]


REGISTRY: list[Check] = []


def register(name, kind, threshold):
    def deco(fn):
        REGISTRY.append(Check(name, kind, threshold, fn))
        return fn

    return deco


def _u(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _projected(out: Tensor, rng) -> Tensor:
    """Scalar sum(out * R) with a fixed random R, so every output entry matters."""
    weights = Tensor(rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape))
    return ad.sum(ad.mul(out, weights))


def _op_check(name, make_inputs, op):
    def run(rng):
        leaves = make_inputs(rng)
        proj_rng_seed = int(rng.integers(1 << 31))
        return check_function(
            lambda *xs: _projected(op(*xs), np.random.default_rng(proj_rng_seed)), leaves
        )

    register(name, "primitive", PRIMITIVE_TOL)(run)


def _small_graph(rng, n=6, p=0.5, loops=False) -> CsrAdjacency:
    iu, ju = np.triu_indices(n, 1)
    hit = rng.random(len(iu)) < p
    src, dst = iu[hit], ju[hit]
    if loops:
        src = np.concatenate([src, np.arange(n)])
        dst = np.concatenate([dst, np.arange(n)])
    vals = rng.uniform(0.2, 1.0, size=len(src))
    return CsrAdjacency.from_arcs(n, src, dst, vals, symmetrize=True)


_op_check("matmul", lambda r: [_u(r, (4, 3)), _u(r, (3, 2))], ad.matmul)
_op_check("transpose", lambda r: [_u(r, (4, 3))], ad.transpose)
_op_check("add", lambda r: [_u(r, (4, 3)), _u(r, (4, 3))], ad.add)
_op_check("add_row_broadcast", lambda r: [_u(r, (4, 3)), _u(r, (1, 3))], ad.add)
_op_check("mul", lambda r: [_u(r, (4, 3)), _u(r, (4, 3))], ad.mul)
_op_check("mul_row_broadcast", lambda r: [_u(r, (4, 3)), _u(r, (1, 3))], ad.mul)
_op_check("mul_scalar_broadcast", lambda r: [_u(r, (4, 3)), _u(r, (1, 1))], ad.mul)
_op_check("scale", lambda r: [_u(r, (4, 3))], lambda x: ad.scale(x, -1.7))
_op_check("concat_cols", lambda r: [_u(r, (4, 3)), _u(r, (4, 2))], lambda a, b: ad.concat_cols([a, b]))
_op_check("gather_rows", lambda r: [_u(r, (4, 3))], lambda x: ad.gather_rows(x, [3, 0, 3, 1, 1]))
_op_check("scatter_rows", lambda r: [_u(r, (4, 3)), _u(r, (2, 3))], lambda b, s: ad.scatter_rows(b, [2, 0], s))
_op_check("sum", lambda r: [_u(r, (4, 3))], lambda x: ad.sum(x))
_op_check("sum_axis0", lambda r: [_u(r, (4, 3))], lambda x: ad.sum(x, axis=0))
_op_check("sum_axis1", lambda r: [_u(r, (4, 3))], lambda x: ad.sum(x, axis=1))
_op_check("mean", lambda r: [_u(r, (4, 3))], lambda x: ad.mean(x, axis=0))
_op_check("power", lambda r: [_u(r, (4, 3), 0.2, 1.0)], lambda x: ad.power(x, 2.5))
_op_check("power_negative_exponent", lambda r: [_u(r, (4, 3), 0.2, 1.0)], lambda x: ad.power(x, -1.0))
_op_check("leaky_relu", lambda r: [_u(r, (4, 3))], lambda x: ad.leaky_relu(x, 0.2))
_op_check("prelu", lambda r: [_u(r, (4, 3)), _u(r, (1, 3), 0.05, 0.5)], ad.prelu)
_op_check("exp", lambda r: [_u(r, (4, 3))], ad.exp)
_op_check("log", lambda r: [_u(r, (4, 3), 0.2, 1.0)], ad.log)
_op_check("l2_norm_rows", lambda r: [_u(r, (4, 3))], ad.l2_norm_rows)
_op_check("cosine_rows", lambda r: [_u(r, (4, 3))],
          lambda z: ad.cosine_rows(np.random.default_rng(5).normal(size=(4, 3)), z))


@register("spmm", "primitive", PRIMITIVE_TOL)
def _check_spmm(rng):
    adj = _small_graph(rng, n=6, loops=True)
    return check_function(lambda h: _projected(ad.spmm(adj, h), np.random.default_rng(1)), [_u(rng, (6, 3))])


@register("spmm_edge_values", "primitive", PRIMITIVE_TOL)
def _check_spmm_values(rng):
    adj = _small_graph(rng, n=6, loops=True)
    leaves = [_u(rng, (6, 3)), _u(rng, (adj.num_arcs, 1))]
    return check_function(
        lambda h, v: _projected(ad.spmm(adj, h, values=v), np.random.default_rng(2)), leaves
    )


@register("segment_softmax", "primitive", PRIMITIVE_TOL)
def _check_segment_softmax(rng):
    adj = _small_graph(rng, n=6, loops=True)
    return check_function(
        lambda x: _projected(ad.segment_softmax(x, adj.row_offsets), np.random.default_rng(3)),
        [_u(rng, (adj.num_arcs, 2))],
    )


def _randomize(params, rng, scale=0.5):
    for p in params:
        p.data = rng.uniform(-scale, scale, size=p.data.shape)
        if "slope" in p.name:
            p.data = rng.uniform(0.05, 0.5, size=p.data.shape)


def _layer_check(name, cfg_factory):
    def run(rng):
        g = generate_sbm([6, 6], 0.5, 0.1, FeatureSpec(dim=4, noise=0.3), seed=int(rng.integers(1 << 31)))
        ctx = GraphContext(g)
        cfg = cfg_factory(g.num_features)
        layer = Layer(cfg, f"check.{name}", rng)
        params = list(layer.params.values())
        _randomize(params, rng)
        x = _u(rng, (g.n, g.num_features))
        x.requires_grad = True
        proj = np.random.default_rng(4)
        weights = Tensor(proj.uniform(-1.0, 1.0, size=(g.n, cfg.output_dim)))
        build = lambda: ad.sum(ad.mul(layer(x, ctx), weights))
        err_params = check_parameters(build, params)
        err_input = check_function(lambda xx: ad.sum(ad.mul(layer(xx, ctx), weights)), [x])
        return max(err_params, err_input)

    register(name, "layer", MODEL_TOL)(run)


_layer_check("gcn_layer", lambda d: LayerConfig("gcn", d, 5))
_layer_check("gat_layer_concat", lambda d: LayerConfig("gat", d, 3, heads=2, concat=True))
_layer_check("gat_layer_mean", lambda d: LayerConfig("gat", d, 3, heads=2, concat=False, activation="identity"))
_layer_check("gin_layer", lambda d: LayerConfig("gin", d, 5))
_layer_check("mlp_layer", lambda d: LayerConfig("mlp", d, 5))


def _loss_check(name, gamma=None, mode="generic"):
    def run(rng):
        m, d = 5, 4
        x = rng.uniform(-1, 1, size=(m, d))
        if mode == "generic":
            z = rng.uniform(-1, 1, size=(m, d))
        else:
            sign = 1.0 if mode == "near_parallel" else -1.0
            z = sign * x * rng.uniform(0.5, 2.0, size=(m, 1)) + rng.uniform(-0.1, 0.1, size=(m, d))
        plan = MaskPlan(m, np.arange(m), np.zeros(0, np.int64), np.zeros(0, np.int64))
        if gamma is None:
            fn = lambda zz: mse_loss(x, zz, plan)
        else:
            fn = lambda zz: sce_loss(x, zz, plan, LossConfig("sce", gamma))
        return check_function(fn, [Tensor(z)])

    register(name, "loss", PRIMITIVE_TOL)(run)


for _g in (1.0, 2.0, 3.0):
    _loss_check(f"sce_gamma{int(_g)}", _g)
_loss_check("sce_gamma2.5", 2.5)
_loss_check("sce_near_parallel", 3.0, "near_parallel")
_loss_check("sce_near_antiparallel", 3.0, "near_antiparallel")
_loss_check("mse", None)


def _model_check(name, **run_kwargs):
    def run(rng):
        g = generate_sbm([6, 6], 0.5, 0.1, FeatureSpec(dim=5, noise=0.3), seed=int(rng.integers(1 << 31)))
        run_cfg = RunConfig(
            mask=MaskConfig(0.5, 0.4),
            optim=OptimConfig(max_epoch=1),
            hidden_size=8,
            heads=2,
            seed=int(rng.integers(1 << 31)),
            **run_kwargs,
        )
        model = GraphMAE.init(g.num_features, run_cfg)
        params = model.parameters()
        _randomize(params, rng)
        ctx = GraphContext(g)
        x = Tensor(g.features)
        plan = sample_mask(g.n, run_cfg.mask, rng=rng)
        return check_parameters(lambda: masked_reconstruction_loss(model, ctx, x, plan, run_cfg), params)

    register(name, "model", MODEL_TOL)(run)


_model_check("graphmae_gat_gat_sce")
_model_check("graphmae_gin_gin_sce", encoder_kind="gin", decoder_kind="gin", loss=LossConfig("sce", 2.0))
_model_check("graphmae_gcn_mlp_mse", encoder_kind="gcn", decoder_kind="mlp", loss=LossConfig("mse"))
_model_check("graphmae_gat_gcn_no_remask", decoder_kind="gcn", remask=False)


@dataclass
class CheckResult:
    name: str
    kind: str
    max_rel_error: float
    threshold: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def run_checks(seed=0, corrupt: Optional[str] = None, names=None) -> list[CheckResult]:
    """Run every registered check; ``corrupt`` scales that op's backward by 1.5."""
    results = []
    for i, check in enumerate(REGISTRY):
        if names is not None and check.name not in names:
            continue
        rng = np.random.default_rng([seed, i])
        start = time.perf_counter()
        if corrupt:
            with ad.inject_backward_fault(corrupt):
                err = check.run(rng)
        else:
            err = check.run(rng)
        results.append(CheckResult(check.name, check.kind, err, check.threshold, time.perf_counter() - start))
    return results


def results_csv(results) -> str:
    lines = ["check,kind,max_rel_error,threshold,passed"]
    for r in results:
        lines.append(f"{r.name},{r.kind},{r.max_rel_error:.3e},{r.threshold:.0e},{int(r.passed)}")
    return "\n".join(lines) + "\n"
