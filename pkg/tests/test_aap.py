import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attrpool.aap import (
    AapConfig,
    aap_backward,
    aap_forward,
    aap_loss,
    auxiliary_hard,
    auxiliary_soft,
    combine,
    finite_difference_grad,
    global_max_normalize,
    gradcheck,
    hard_indicator,
    local_max_pool,
    min_tie_gap,
    random_branch_matrix,
    random_labels,
    relative_error,
)
from attrpool.errors import ContractError, DomainError, SchemaError
from attrpool.priors import build_priors

from oracles import forward_oracle, loss_oracle

P22 = np.array([[0.9, 0.1], [0.2, 0.8]])
PRIORS4 = build_priors([[1, 1], [1, 0], [0, 1], [1, 1]])


def random_priors(k, seed):
    rng = np.random.default_rng(seed)
    return build_priors((rng.random((60, k)) < 0.4).astype(int), epsilon=1.0)


# local max pooling

def test_local_max_pool_example():
    Q, idx = local_max_pool(P22)
    np.testing.assert_array_equal(Q, [[0.2, 0.8], [0.9, 0.1]])
    np.testing.assert_array_equal(idx, [[1, 1], [0, 0]])


def test_local_max_pool_identical_rows():
    r = np.array([0.1, 0.6, 0.3])
    Q, idx = local_max_pool(np.tile(r, (4, 1)))
    np.testing.assert_array_equal(Q, np.tile(r, (4, 1)))
    # ties resolve to the smallest index other than l
    np.testing.assert_array_equal(idx[:, 0], [1, 0, 0, 0])


def test_local_max_pool_dominant_row():
    P = np.array([[0.1, 0.2, 0.3], [0.9, 0.8, 0.7], [0.05, 0.1, 0.2]])
    Q, _ = local_max_pool(P)
    brute = np.array([[max(P[i, j] for i in range(3) if i != l) for j in range(3)] for l in range(3)])
    np.testing.assert_array_equal(Q, brute)
    np.testing.assert_array_equal(Q[0], P[1])
    np.testing.assert_array_equal(Q[2], P[1])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_local_max_pool_brute_force(m, k, seed):
    rng = np.random.default_rng(seed)
    P = rng.integers(0, 4, size=(m, k)) / 4.0  # many ties on purpose
    Q, idx = local_max_pool(P)
    for l in range(m):
        for j in range(k):
            others = [i for i in range(m) if i != l]
            best = max(P[i, j] for i in others)
            first = next(i for i in others if P[i, j] == best)
            assert Q[l, j] == best
            assert idx[l, j] == first
            assert idx[l, j] != l


def test_local_max_pool_single_branch():
    with pytest.raises(DomainError):
        local_max_pool([[0.5, 0.5]])


# hard indicator variant

def test_hard_indicator_example():
    Q = np.array([[0.2, 0.8], [0.9, 0.1]])
    S = hard_indicator(Q, 0.5)
    np.testing.assert_array_equal(S, [[0, 1], [1, 0]])
    np.testing.assert_allclose(auxiliary_hard(S, PRIORS4), [[2 / 3, 1], [1, 2 / 3]], atol=1e-15)


def test_hard_indicator_high_threshold_falls_back():
    Q = np.array([[0.2, 0.8], [0.9, 0.1]])
    S = hard_indicator(Q, 0.95)
    assert not S.any()
    np.testing.assert_array_equal(auxiliary_hard(S, PRIORS4), np.tile(PRIORS4.p, (2, 1)))


def test_hard_indicator_zero_threshold():
    pri = random_priors(5, 1)
    Q = np.random.default_rng(0).uniform(0.01, 1, size=(3, 5))
    S = hard_indicator(Q, 0.0)
    assert S.all()
    col_mean = [sum(pri.C[i, j] for i in range(5)) / 5 for j in range(5)]
    np.testing.assert_allclose(auxiliary_hard(S, pri), np.tile(col_mean, (3, 1)), atol=1e-15)


# soft context estimate

def test_auxiliary_soft_example():
    Q = np.array([[0.2, 0.8], [0.9, 0.1]])
    Pplus = auxiliary_soft(Q, PRIORS4)
    np.testing.assert_allclose(Pplus, [[0.46667, 0.86667], [0.93333, 0.4]], atol=5e-6)
    np.testing.assert_allclose(Pplus, [[7 / 15, 13 / 15], [14 / 15, 0.4]], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_auxiliary_soft_marginal_fixed_point(seed):
    # Q rows equal to p give P+ rows equal to p only through sum_i (p_i C + (1 - p_i) Ct)[i, j] / k = p_j
    pri = random_priors(6, seed)
    Q = np.tile(pri.p, (3, 1))
    np.testing.assert_allclose(auxiliary_soft(Q, pri), Q, rtol=0, atol=1e-12)


def test_auxiliary_soft_all_ones():
    pri = random_priors(4, 2)
    out = auxiliary_soft(np.ones((2, 4)), pri)
    np.testing.assert_allclose(out, np.tile(pri.C.mean(axis=0), (2, 1)), atol=1e-15)


def test_auxiliary_soft_k_mismatch():
    with pytest.raises(SchemaError):
        auxiliary_soft(np.ones((2, 3)), PRIORS4)


# combination and normalisation

def test_combine_examples():
    Pplus = auxiliary_soft(local_max_pool(P22)[0], PRIORS4)
    assert np.array_equal(combine(P22, Pplus, 0.0), P22)
    np.testing.assert_allclose(combine(P22, Pplus, 0.2), [[0.99333, 0.27333], [0.38667, 0.88]], atol=5e-6)
    np.testing.assert_array_equal(combine(np.zeros((2, 2)), Pplus, 1.0), Pplus)
    with pytest.raises(ContractError):
        combine(P22, np.ones((3, 2)), 0.2)


def test_global_max_normalize_examples():
    Phat = np.array([[0.99333, 0.27333], [0.38667, 0.88]])
    phat, idx, E = global_max_normalize(Phat)
    np.testing.assert_array_equal(E, [0.99333, 0.88])
    np.testing.assert_array_equal(idx, [0, 1])
    np.testing.assert_allclose(phat, [0.53025, 0.46975], atol=5e-6)

    phat, _, _ = global_max_normalize(P22)
    np.testing.assert_allclose(phat, [0.9 / 1.7, 0.8 / 1.7], atol=1e-15)

    phat, _, _ = global_max_normalize([[0.0, 0.3], [0.0, 0.7]])
    np.testing.assert_array_equal(phat, [0.0, 1.0])


def test_global_max_normalize_zero_input():
    with pytest.raises(DomainError):
        global_max_normalize(np.zeros((3, 4)))


def test_global_max_tie_smallest_index():
    _, idx, _ = global_max_normalize([[0.5, 0.2], [0.5, 0.2], [0.1, 0.2]])
    np.testing.assert_array_equal(idx, [0, 0])


# full forward pass

def test_worked_example_forward():
    phat, cache = aap_forward(P22, PRIORS4, AapConfig(lam=0.2))
    np.testing.assert_allclose(phat, [0.53025, 0.46975], atol=5e-6)
    ref, *_ = forward_oracle(P22.tolist(), PRIORS4.C.tolist(), PRIORS4.Ctilde.tolist(), 0.2)
    np.testing.assert_allclose(phat, ref, rtol=0, atol=1e-15)
    assert cache.lam == 0.2
    assert cache.local_argmax.shape == (2, 2)


def test_lambda_zero_reduction_bitwise():
    rng = np.random.default_rng(5)
    pri = random_priors(6, 5)
    for _ in range(50):
        P = random_branch_matrix(rng, 4, 6)
        phat, _ = aap_forward(P, pri, AapConfig(lam=0.0))
        E = P.max(axis=0)
        assert phat.tobytes() == (E / E.sum()).tobytes()


def test_forward_matches_scalar_oracle():
    rng = np.random.default_rng(17)
    for trial in range(200):
        m = int(rng.integers(2, 5))
        k = int(rng.integers(2, 9))
        pri = random_priors(k, trial)
        P = rng.random((m, k))
        lam = float(rng.uniform(0, 1))
        phat, cache = aap_forward(P, pri, AapConfig(lam=lam))
        ref, Q, Pplus, Phat = forward_oracle(P.tolist(), pri.C.tolist(), pri.Ctilde.tolist(), lam)
        np.testing.assert_allclose(phat, ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cache.Q, Q, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cache.Pplus, Pplus, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cache.Phat, Phat, rtol=0, atol=1e-12)


def test_batched_forward_matches_single():
    rng = np.random.default_rng(2)
    pri = random_priors(5, 2)
    P = np.stack([random_branch_matrix(rng, 3, 5) for _ in range(7)])
    phat_b, _ = aap_forward(P, pri)
    for i in range(7):
        np.testing.assert_allclose(phat_b[i], aap_forward(P[i], pri)[0], rtol=0, atol=1e-15)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 4), st.integers(2, 8), st.floats(0, 2), st.integers(0, 2**31))
def test_forward_invariants(m, k, lam, seed):
    rng = np.random.default_rng(seed)
    pri = random_priors(k, seed % 1000)
    P = rng.random((m, k))
    phat, c = aap_forward(P, pri, AapConfig(lam=lam))
    assert abs(phat.sum() - 1) <= 1e-12
    assert np.all(phat >= 0)
    assert np.all((c.Q >= 0) & (c.Q <= 1))
    assert np.all((c.Pplus >= 0) & (c.Pplus <= 1 + 1e-15))
    assert np.all((c.Phat >= 0) & (c.Phat <= 1 + lam + 1e-15))
    assert np.all(c.local_argmax != np.arange(m)[:, None])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4), st.integers(2, 8), st.floats(0.01, 100), st.integers(0, 2**31))
def test_argmax_invariant_under_scaling(m, k, c, seed):
    rng = np.random.default_rng(seed)
    pri = random_priors(k, 0)
    P = rng.random((m, k))
    cfg = AapConfig(lam=0.0)
    a, ca = aap_forward(P, pri, cfg)
    b, cb = aap_forward(P * c, pri, cfg)
    np.testing.assert_array_equal(ca.col_argmax, cb.col_argmax)
    assert np.argmax(a) == np.argmax(b)


def test_invalid_config():
    with pytest.raises(DomainError):
        AapConfig(lam=-0.1)
    with pytest.raises(DomainError):
        AapConfig(tau=1.0)
    with pytest.raises(DomainError):
        AapConfig(tie_break="largest-index")


# loss

def test_loss_examples():
    phat, _ = aap_forward(P22, PRIORS4, AapConfig(lam=0.2))
    assert aap_loss(phat, [1, 0]) == pytest.approx(0.22066, abs=1e-5)  # quoted value is truncated
    assert aap_loss(phat, [1, 0]) == pytest.approx(loss_oracle(phat.tolist(), [1, 0]), abs=1e-15)
    assert aap_loss([0.5, 0.5], [1, 1]) == 0
    assert aap_loss([1.0, 0.0], [0, 1]) == 1.0


def test_loss_batch_mean():
    phat = np.array([[1.0, 0.0], [0.5, 0.5]])
    y = np.array([[0, 1], [1, 1]])
    assert aap_loss(phat, y) == 0.5


def test_loss_rejects_empty_labels():
    with pytest.raises(DomainError):
        aap_loss([0.5, 0.5], [0, 0])


# backward pass

def test_backward_lambda_zero_sparsity():
    rng = np.random.default_rng(4)
    pri = random_priors(6, 4)
    cfg = AapConfig(lam=0.0)
    for _ in range(20):
        P = random_branch_matrix(rng, 4, 6)
        _, cache = aap_forward(P, pri, cfg)
        g = aap_backward(cache, random_labels(rng, 6), pri, cfg)
        mask = np.zeros_like(P, dtype=bool)
        mask[cache.col_argmax, np.arange(6)] = True
        assert np.all(g[~mask] == 0)


def test_backward_worked_example_matches_fd():
    cfg = AapConfig(lam=0.2)
    _, cache = aap_forward(P22, PRIORS4, cfg)
    g = aap_backward(cache, [1, 0], PRIORS4, cfg)
    fd = finite_difference_grad(P22, [1, 0], PRIORS4, cfg, h=1e-6)
    assert relative_error(g, fd).max() < 1e-6
    np.testing.assert_allclose(g, [[-0.2444506, 0.0265927], [-0.02355864, 0.27377992]], atol=1e-7)


@pytest.mark.parametrize("m,k", [(2, 2), (3, 5), (4, 6), (4, 8)])
def test_backward_random_points(m, k):
    pri = random_priors(k, m * 10 + k)
    report = gradcheck(pri, m=m, lam=0.2, trials=25, seed=m + k)
    assert report.passed, report.summary_line()
    assert report.max_rel_err < 1e-4


def test_backward_batched_equals_mean_of_singles():
    rng = np.random.default_rng(8)
    pri = random_priors(5, 8)
    cfg = AapConfig(lam=0.3)
    P = np.stack([random_branch_matrix(rng, 3, 5) for _ in range(4)])
    y = np.stack([random_labels(rng, 5) for _ in range(4)])
    _, cache = aap_forward(P, pri, cfg)
    g = aap_backward(cache, y, pri, cfg)
    for i in range(4):
        _, ci = aap_forward(P[i], pri, cfg)
        np.testing.assert_allclose(g[i], aap_backward(ci, y[i], pri, cfg) / 4, rtol=0, atol=1e-16)


def test_backward_stale_cache():
    _, cache = aap_forward(P22, PRIORS4)
    with pytest.raises(ContractError):
        aap_backward(cache, [1, 0, 1], PRIORS4)
    with pytest.raises(ContractError):
        aap_backward(cache, [1, 0], random_priors(3, 0))


def test_fd_mismatch_when_argmax_flips():
    # column 0: rows 0 and 1 are within h of each other, so the central
    # difference straddles the selection boundary while the analytic
    # gradient holds the mask fixed
    P = np.array([[0.5, 0.1], [0.5 - 2e-7, 0.7]])
    cfg = AapConfig(lam=0.0)
    _, cache = aap_forward(P, PRIORS4, cfg)
    g = aap_backward(cache, [1, 0], PRIORS4, cfg)
    fd = finite_difference_grad(P, [1, 0], PRIORS4, cfg, h=1e-6)
    assert min_tie_gap(P, PRIORS4, cfg) < 1e-6
    assert relative_error(g, fd).max() > 0.1


def test_fd_step_tradeoff():
    cfg = AapConfig(lam=0.2)
    rng = np.random.default_rng(12)
    pri = random_priors(6, 12)
    while True:
        P = random_branch_matrix(rng, 4, 6)
        if min_tie_gap(P, pri, cfg) > 1e-2:
            break
    y = random_labels(rng, 6)
    _, cache = aap_forward(P, pri, cfg)
    g = aap_backward(cache, y, pri, cfg)
    steps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-8, 1e-10]
    err = [np.abs(finite_difference_grad(P, y, pri, cfg, h) - g).max() for h in steps]
    best = int(np.argmin(err))
    # truncation dominates for large steps, round-off for tiny ones
    assert 0 < best < len(steps) - 1
    assert err[0] > 10 * err[best]
    assert err[-1] > 10 * err[best]
    for h, e in zip(steps, err):
        if h in (1e-4, 1e-5, 1e-6):
            assert e < 1e-7


def test_fd_rejects_bad_step():
    with pytest.raises(DomainError):
        finite_difference_grad(P22, [1, 0], PRIORS4, h=0)


def test_gradcheck_report_format():
    report = gradcheck(PRIORS4, m=2, trials=3, seed=1)
    line = report.summary_line()
    assert re.match(r"GRADCHECK status=PASS trials=3 entries=12 failures=0 max_rel_err=\S+ tol=1\.0e-04$", line)
    table = report.table().splitlines()
    assert table[0].split() == ["trial", "position", "analytic", "numeric", "rel_err", "ok"]
    assert len(table) == 13
    assert str(report).endswith(line)


def test_gradcheck_fails_with_wrong_gradient(monkeypatch):
    import attrpool.aap as aap_mod

    real = aap_mod.aap_backward
    monkeypatch.setattr(aap_mod, "aap_backward", lambda *a, **kw: 1.01 * real(*a, **kw))
    report = aap_mod.gradcheck(PRIORS4, m=2, trials=2, seed=0)
    assert not report.passed
    assert "status=FAIL" in report.summary_line()
