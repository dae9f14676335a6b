import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stepbcd.core import make_rng
from stepbcd.prox import (
    hardmax,
    hardmax_columns,
    norm_l20,
    prox_hardmax_column,
    prox_hardmax_matrix,
    prox_l20_rows,
    prox_step_matrix,
    prox_step_scalar,
    step,
)

finite_arrays = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
    elements=st.floats(-1e6, 1e6),
)


def step_objective(u, a, b, rho):
    """phi(u) = (a - step(u))^2 + rho (u - b)^2, the scalar sub-problem cost."""
    s = 1.0 if u > 0.0 else 0.0
    return (a - s) ** 2 + rho * (u - b) ** 2


def step_oracle_min(a, b, rho, eps_tiny=1e-10):
    """Grid search plus the one-sided-limit candidate evaluated at eps_tiny."""
    grid = np.arange(-5.0, 5.0 + 1e-4, 1e-4)
    s = (grid > 0.0).astype(float)
    vals = (a - s) ** 2 + rho * (grid - b) ** 2
    return min(float(vals.min()), step_objective(eps_tiny, a, b, rho))


def hardmax_objective(u, y_index, b, mu):
    """psi(u) = ||e_y - hardmax(u)||^2 + mu ||u - b||^2."""
    hm = hardmax(u)
    y = np.zeros_like(u)
    y[y_index] = 1.0
    return float(((y - hm) ** 2).sum() + mu * ((u - b) ** 2).sum())


def hardmax_oracle_min(y_index, b, mu):
    """Two candidates: keep b, or the analytic limit of the hot bump."""
    delta = b.max() - b[y_index]
    hm = hardmax(b)
    miss = float(hm.sum() + 1.0 - 2.0 * hm[y_index])
    return min(miss, mu * delta * delta)


class TestStep:
    def test_definition_at_zero_and_signs(self):
        assert np.array_equal(step(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 1.0])

    def test_strict_positivity_no_floor(self):
        assert step(np.array([1e-300]))[0] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(finite_arrays)
    def test_idempotent(self, x):
        once = step(x)
        assert np.array_equal(step(once), once)
        assert set(np.unique(once)) <= {0.0, 1.0}


class TestHardmax:
    def test_all_ties_gives_all_ones(self):
        assert np.array_equal(hardmax(np.zeros(3)), [1.0, 1.0, 1.0])

    def test_two_way_tie(self):
        assert np.array_equal(hardmax(np.array([3.0, 1.0, 3.0])), [1.0, 0.0, 1.0])

    def test_unique_max(self):
        assert np.array_equal(hardmax(np.array([0.5, 2.0])), [0.0, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-100, 100)))
    def test_ones_exactly_at_argmax_set(self, a):
        hm = hardmax(a)
        assert set(np.unique(hm)) <= {0.0, 1.0}
        assert hm.sum() >= 1.0
        assert np.array_equal(np.flatnonzero(hm == 1.0), np.flatnonzero(a == a.max()))

    def test_columnwise_matches_vector(self):
        a = make_rng(3).standard_normal((5, 7))
        cols = hardmax_columns(a)
        for s in range(7):
            assert np.array_equal(cols[:, s], hardmax(a[:, s]))


class TestProxHardmaxColumn:
    def test_keep_branch(self):
        b = np.array([0.5, 2.0])
        # mu * delta^2 = 2.25 beats the miss cost 2 -> keep b
        out = prox_hardmax_column(0, b, mu=1.0)
        assert np.array_equal(out, b)
        assert hardmax_objective(out, 0, b, 1.0) <= hardmax_oracle_min(0, b, 1.0) + 1e-9

    def test_bump_branch(self):
        b = np.array([0.5, 2.0])
        out = prox_hardmax_column(0, b, mu=0.5)
        assert np.allclose(out, [2.0 + 1e-10, 2.0], rtol=0, atol=0) or np.array_equal(
            out, np.array([0.5 + 1.5 + 1e-10, 2.0])
        )
        assert out[0] == 0.5 + (1.5 + 1e-10)
        assert hardmax_objective(out, 0, b, 0.5) <= hardmax_oracle_min(0, b, 0.5) + 1e-9

    def test_already_hot_returns_unchanged(self):
        b = np.array([2.0, 0.5])
        assert np.array_equal(prox_hardmax_column(0, b, mu=1.0), b)

    def test_exact_tie_keeps_b(self):
        b = np.array([0.0, 1.0])  # delta = 1, miss = 2, mu = 2 -> exact tie
        assert np.array_equal(prox_hardmax_column(0, b, mu=2.0), b)

    def test_random_instances_beat_oracle(self):
        rng = make_rng(17)
        for _ in range(500):
            m = int(rng.integers(1, 9))
            b = rng.uniform(-2.0, 2.0, m)
            y_index = int(rng.integers(0, m))
            mu = float(rng.uniform(0.05, 1.0))
            out = prox_hardmax_column(y_index, b, mu)
            assert hardmax_objective(out, y_index, b, mu) <= hardmax_oracle_min(y_index, b, mu) + 1e-9


class TestProxHardmaxMatrix:
    def test_single_column_reduces_to_column_op(self):
        rng = make_rng(21)
        b = rng.standard_normal((5, 1))
        y = np.zeros((5, 1))
        y[2, 0] = 1.0
        out = prox_hardmax_matrix(b, y, tau=0.7)
        ref = prox_hardmax_column(2, b[:, 0], mu=0.7)
        assert np.array_equal(out[:, 0], ref)

    def test_zero_loss_input_unchanged(self):
        rng = make_rng(22)
        b = rng.standard_normal((4, 9))
        y = hardmax_columns(b)
        # force unique maxima so every label column is one-hot
        keep = np.flatnonzero(y.sum(axis=0) == 1.0)
        b, y = b[:, keep], y[:, keep]
        assert np.array_equal(prox_hardmax_matrix(b, y, tau=1e-6), b)

    def test_matches_columnwise_oracle(self):
        rng = make_rng(23)
        b = rng.uniform(-2, 2, (4, 8))
        labels = rng.integers(0, 4, 8)
        y = np.zeros((4, 8))
        y[labels, np.arange(8)] = 1.0
        tau = 0.02
        out = prox_hardmax_matrix(b, y, tau)
        mu = tau * 8
        for s in range(8):
            col = out[:, s]
            ref = prox_hardmax_column(int(labels[s]), b[:, s], mu)
            assert np.array_equal(col, ref)
            assert hardmax_objective(col, int(labels[s]), b[:, s], mu) <= (
                hardmax_oracle_min(int(labels[s]), b[:, s], mu) + 1e-9
            )

    def test_non_one_hot_column_is_named(self):
        b = np.zeros((3, 4))
        y = np.zeros((3, 4))
        y[0, :] = 1.0
        y[1, 2] = 1.0  # column 2 has two ones
        with pytest.raises(ValueError, match="column 2"):
            prox_hardmax_matrix(b, y, tau=1.0)

    def test_column_permutation_equivariance(self):
        rng = make_rng(24)
        b = rng.standard_normal((5, 10))
        labels = rng.integers(0, 5, 10)
        y = np.zeros((5, 10))
        y[labels, np.arange(10)] = 1.0
        perm = rng.permutation(10)
        out = prox_hardmax_matrix(b, y, tau=0.3)
        out_perm = prox_hardmax_matrix(b[:, perm], y[:, perm], tau=0.3)
        assert np.array_equal(out[:, perm], out_perm)


class TestProxStepScalar:
    @pytest.mark.parametrize(
        "a,b,rho,expected",
        [
            (1.0, 1.0, 0.1, 1.0),
            (0.0, 1.0, 0.1, 0.0),
            (1.0, -1.0, 0.1, 1e-10),
            (0.0, -1.0, 0.1, -1.0),
        ],
    )
    def test_reference_examples(self, a, b, rho, expected):
        out = prox_step_scalar(a, b, rho)
        assert out == expected
        assert step_objective(out, a, b, rho) <= step_oracle_min(a, b, rho) + 1e-6

    def test_tie_positive_b_keeps_b(self):
        # exact dyadic tie: a = 0.25 gives t = -0.5 = -rho b^2 with rho = 0.5, b = 1
        assert prox_step_scalar(0.25, 1.0, 0.5) == 1.0

    def test_tie_nonpositive_b_keeps_b(self):
        # exact dyadic tie: a = 0.75 gives t = 0.5 = rho b^2 with rho = 0.5, b = -1
        assert prox_step_scalar(0.75, -1.0, 0.5) == -1.0

    def test_b_zero_boundary(self):
        # b = 0, a = 0: t = -1 < 0 = rho b^2 -> keep b = 0
        assert prox_step_scalar(0.0, 0.0, 0.1) == 0.0
        # b = 0, a = 1: t = 1 > 0 -> one-sided limit
        assert prox_step_scalar(1.0, 0.0, 0.1) == 1e-10

    @settings(max_examples=200, deadline=None)
    @given(
        st.one_of(st.sampled_from([0.0, 1.0]), st.floats(0.0, 1.0)),
        st.floats(-3.0, 3.0),
        st.floats(1e-3, 10.0),
    )
    def test_oracle_optimality(self, a, b, rho):
        out = prox_step_scalar(a, b, rho)
        assert step_objective(out, a, b, rho) <= step_oracle_min(a, b, rho) + 1e-6


class TestProxStepMatrix:
    def test_scalar_reduction(self):
        out = prox_step_matrix(np.array([[1.0]]), np.array([[-1.0]]), tau=0.01, pi=0.1)
        assert out[0, 0] == prox_step_scalar(1.0, -1.0, rho=0.1)

    def test_step_of_b_is_fixed_point(self):
        rng = make_rng(31)
        b = rng.standard_normal((6, 7))
        b[0, 0] = 0.0  # the a=0, b=0 corner keeps b
        out = prox_step_matrix(step(b), b, tau=1e-6, pi=1e-7)
        assert np.array_equal(out, b)

    @pytest.mark.parametrize("tau,pi", [(0.01, 0.1), (1.0, 0.1)])
    def test_matches_scalar_entrywise(self, tau, pi):
        rng = make_rng(32)
        v = rng.uniform(0.0, 1.0, (5, 6))
        b = rng.uniform(-3.0, 3.0, (5, 6))
        out = prox_step_matrix(v, b, tau, pi)
        rho = tau / pi
        for j in range(5):
            for r in range(6):
                assert out[j, r] == prox_step_scalar(v[j, r], b[j, r], rho)

    def test_minimizes_weighted_entry_objective(self):
        # the matrix op must minimize (tau/2)(u-b)^2 + (pi/2)(a-step(u))^2
        rng = make_rng(33)
        v = rng.uniform(0.0, 1.0, (4, 5))
        b = rng.uniform(-2.0, 2.0, (4, 5))
        tau, pi = 0.7, 0.3
        out = prox_step_matrix(v, b, tau, pi)
        grid = np.arange(-4.0, 4.0, 1e-4)
        for j in range(4):
            for r in range(5):
                vals = 0.5 * tau * (grid - b[j, r]) ** 2 + 0.5 * pi * (v[j, r] - (grid > 0)) ** 2
                got = 0.5 * tau * (out[j, r] - b[j, r]) ** 2 + 0.5 * pi * (v[j, r] - (out[j, r] > 0)) ** 2
                limit = 0.5 * tau * (1e-10 - b[j, r]) ** 2 + 0.5 * pi * (v[j, r] - 1.0) ** 2
                assert got <= min(vals.min(), limit) + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            prox_step_matrix(np.zeros((2, 2)), np.zeros((2, 3)), 1.0, 1.0)

    def test_entry_permutation_equivariance(self):
        rng = make_rng(34)
        v = rng.uniform(0, 1, (3, 8))
        b = rng.standard_normal((3, 8))
        perm = rng.permutation(8)
        a = prox_step_matrix(v, b, 0.2, 0.5)
        b_out = prox_step_matrix(v[:, perm], b[:, perm], 0.2, 0.5)
        assert np.array_equal(a[:, perm], b_out)


def l20_prox_oracle(h, beta, lam):
    """Per-row two-candidate comparison of lam*[row nonzero] + (1/2b)||x - h||^2."""
    out = h.copy()
    for s in range(h.shape[0]):
        keep_cost = lam * float(np.any(h[s] != 0.0))
        zero_cost = float((h[s] ** 2).sum()) / (2.0 * beta)
        if zero_cost < keep_cost:
            out[s] = 0.0
    return out


class TestProxL20Rows:
    def test_exact_tie_keeps_row(self):
        h = np.array([[0.6, 0.8]])  # norm exactly 1.0 = sqrt(2 * 0.5 * 1)
        assert np.array_equal(prox_l20_rows(h, beta=0.5, lam=1.0), h)

    def test_lambda_zero_is_identity(self):
        rng = make_rng(41)
        h = rng.standard_normal((6, 4))
        h[2] = 0.0
        assert np.array_equal(prox_l20_rows(h, beta=0.5, lam=0.0), h)

    def test_below_and_above_threshold(self):
        h = np.array([[0.5, 0.0], [2.0, 0.0]])
        out = prox_l20_rows(h, beta=0.5, lam=1.0)
        assert np.array_equal(out, np.array([[0.0, 0.0], [2.0, 0.0]]))

    def test_matches_two_candidate_oracle(self):
        rng = make_rng(42)
        for _ in range(200):
            h = rng.standard_normal((int(rng.integers(1, 8)), int(rng.integers(1, 6))))
            beta = float(rng.uniform(0.01, 2.0))
            lam = float(rng.uniform(0.0, 2.0))
            assert np.array_equal(prox_l20_rows(h, beta, lam), l20_prox_oracle(h, beta, lam))

    @settings(max_examples=100, deadline=None)
    @given(finite_arrays, st.floats(1e-3, 10.0), st.floats(0.0, 10.0))
    def test_rows_kept_or_zeroed_never_shrunk(self, h, beta, lam):
        out = prox_l20_rows(h, beta, lam)
        for s in range(h.shape[0]):
            assert np.array_equal(out[s], h[s]) or not np.any(out[s])

    def test_validation(self):
        with pytest.raises(ValueError):
            prox_l20_rows(np.zeros((2, 2)), beta=0.0, lam=1.0)
        with pytest.raises(ValueError):
            prox_l20_rows(np.zeros((2, 2)), beta=1.0, lam=-0.1)


def test_norm_l20_counts_nonzero_columns():
    w = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    assert norm_l20(w) == 2
    assert norm_l20(np.zeros((3, 3))) == 0
