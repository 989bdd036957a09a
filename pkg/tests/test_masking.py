import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphmae import autodiff as ad
from graphmae.autodiff import Tape, Tensor
from graphmae.errors import ValidationError
from graphmae.masking import MaskConfig, MaskPlan, MaskTokens, apply_input_mask, remask, sample_mask


def _tokens(d, dh, seed=0):
    return MaskTokens.init(d, dh, seed=seed)


def test_config_ranges():
    with pytest.raises(ValidationError):
        MaskConfig(1.5)
    with pytest.raises(ValidationError):
        MaskConfig(0.5, -0.1)


def test_sample_examples():
    plan = sample_mask(4, MaskConfig(0.5, seed=1))
    assert len(plan) == 2 and len(set(plan.masked.tolist())) == 2
    assert len(sample_mask(10, MaskConfig(0.75, seed=1))) == 7


def test_zero_ratio_warns_and_is_empty(caplog):
    with caplog.at_level(logging.WARNING, logger="graphmae.masking"):
        plan = sample_mask(5, MaskConfig(0.0))
    assert len(plan) == 0
    assert "masks no nodes" in caplog.text


def test_sampling_is_seeded():
    a = sample_mask(50, MaskConfig(0.5, 0.3, seed=9))
    b = sample_mask(50, MaskConfig(0.5, 0.3, seed=9))
    c = sample_mask(50, MaskConfig(0.5, 0.3, seed=10))
    assert np.array_equal(a.masked, b.masked) and np.array_equal(a.donors, b.donors)
    assert not np.array_equal(a.masked, c.masked)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 200), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]),
       st.sampled_from([0.0, 0.05, 0.1, 0.5, 1.0]), st.integers(0, 2**32 - 1))
def test_plan_invariants(n, ratio, replace, seed):
    plan = sample_mask(n, MaskConfig(ratio, replace, seed))
    assert len(plan) == math.floor(ratio * n)
    assert np.all(np.diff(plan.masked) > 0)
    assert set(plan.substituted.tolist()) <= set(plan.masked.tolist())
    assert len(plan.substituted) == math.floor(replace * len(plan))
    assert len(plan.donors) == len(plan.substituted)
    assert np.all((plan.donors >= 0) & (plan.donors < n))
    assert len(plan.token_rows) + len(plan.substituted) == len(plan)


def test_masking_frequency_is_uniform():
    n, seeds = 200, 2000
    counts = np.zeros(n)
    for s in range(seeds):
        counts[sample_mask(n, MaskConfig(0.5), rng=np.random.default_rng(s)).masked] += 1
    freq = counts / seeds
    # binomial sd is 0.011 per node; 5 sd is generous
    assert np.max(np.abs(freq - 0.5)) < 0.056
    assert abs(freq.mean() - 0.5) < 1e-12


def test_first_positions_are_not_favoured():
    # a broken shuffle (e.g. drawing from [0, n) for every i) biases low indices
    n, k, seeds = 10, 3, 20000
    counts = np.zeros(n)
    for s in range(seeds):
        counts[sample_mask(n, MaskConfig(k / n), rng=np.random.default_rng(s)).masked] += 1
    assert np.max(np.abs(counts / seeds - 0.3)) < 0.02


# -------------------------------------------------------------- corruption


def test_replace_rate_zero_uses_token(rng):
    x = Tensor(rng.normal(size=(10, 3)))
    tok = _tokens(3, 2)
    plan = sample_mask(10, MaskConfig(0.5, 0.0, seed=2))
    out = apply_input_mask(x, plan, tok).data
    assert np.all(out[plan.masked] == tok.x_mask.data)
    keep = np.setdiff1d(np.arange(10), plan.masked)
    assert np.array_equal(out[keep], x.data[keep])


def test_empty_plan_is_identity(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    h = Tensor(rng.normal(size=(4, 2)))
    tok = _tokens(3, 2)
    assert apply_input_mask(x, MaskPlan.empty(4), tok) is x
    assert remask(h, MaskPlan.empty(4), tok) is h


def test_substitution_counts_and_donors(rng):
    x = rng.normal(size=(8, 3))
    tok = _tokens(3, 2)
    plan = sample_mask(8, MaskConfig(0.5, 0.5, seed=4))
    out = apply_input_mask(Tensor(x), plan, tok).data
    assert len(plan) == 4 and len(plan.substituted) == 2
    for node, donor in plan.substitution_source.items():
        assert np.array_equal(out[node], x[donor])
    assert np.all(out[plan.token_rows] == tok.x_mask.data)
    assert len(plan.token_rows) == 2


def test_remask_examples(rng):
    h = rng.normal(size=(6, 4))
    tok = _tokens(3, 4)
    plan = MaskPlan(6, np.array([1, 4]), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    out = remask(Tensor(h), plan, tok).data
    assert np.all(out[[1, 4]] == tok.h_dmask.data)
    assert np.array_equal(out[[0, 2, 3, 5]], h[[0, 2, 3, 5]])
    full = sample_mask(6, MaskConfig(1.0, 0.5, seed=0))
    assert np.all(remask(Tensor(h), full, tok).data == tok.h_dmask.data)


def test_index_and_shape_errors(rng):
    tok = _tokens(3, 2)
    bad = MaskPlan(4, np.array([5]), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValidationError):
        apply_input_mask(Tensor(np.zeros((4, 3))), bad, tok)
    with pytest.raises(ValidationError):
        remask(Tensor(np.zeros((4, 2))), bad, tok)
    with pytest.raises(ValidationError):
        apply_input_mask(Tensor(np.zeros((5, 3))), MaskPlan.empty(4), tok)
    with pytest.raises(ValidationError):
        remask(Tensor(np.zeros((4, 3))), sample_mask(4, MaskConfig(0.5)), tok)


def test_token_gradients_flow(rng):
    x = Tensor(rng.normal(size=(6, 3)))
    tok = _tokens(3, 2)
    plan = sample_mask(6, MaskConfig(0.5, seed=3))
    with Tape() as tape:
        loss = ad.sum(apply_input_mask(x, plan, tok))
    ad.backward(tape, loss)
    # each masked row contributes one copy of the token
    assert np.array_equal(tok.x_mask.grad, np.full((1, 3), float(len(plan))))
