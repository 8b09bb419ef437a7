"""Tests for the fixed-iteration ADMM solver and quality metrics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pclsred import linalg, solve
from pclsred.pcls import SingularHessianError
from pclsred.solve import (
    AdmmSettings,
    active_set_polish,
    admm_solve,
    brute_force_solve,
    feasibility_violation,
    quality,
    reference_solution,
    shifted_geomean,
)


def random_qp(rng, n, n_i, tight=True):
    """Random strictly convex instance; tight pulls the target outside the box."""
    A = rng.standard_normal((2 * n, n)) + np.vstack([np.eye(n), np.eye(n)])
    target = rng.standard_normal(n)
    if tight:
        target *= 3.0
    b = A @ target
    G = np.vstack([np.eye(n), -np.eye(n)])[:n_i]
    g = np.full(n_i, 0.8)
    return A, b, G, g


class TestSettings:
    def test_defaults(self):
        s = AdmmSettings()
        assert s.rho == 1.0
        assert s.alpha == 1.6
        assert s.iterations == 200
        assert s.precision == "f64"
        assert s.dtype is np.float64

    def test_alpha1_defaults_to_one_minus_alpha(self):
        assert AdmmSettings().alpha1_value == pytest.approx(-0.6)
        assert AdmmSettings(alpha=1.0).alpha1_value == 0.0
        assert AdmmSettings(alpha1=0.25).alpha1_value == 0.25

    def test_validate_passes_defaults_through(self):
        s = AdmmSettings()
        assert s.validate() is s

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": 0.0},
            {"alpha": 2.0},
            {"alpha": -0.5},
            {"rho": 0.0},
            {"rho": -1.0},
            {"iterations": 0},
            {"precision": "f16"},
        ],
    )
    def test_validate_rejects(self, kwargs):
        with pytest.raises(ValueError):
            AdmmSettings(**kwargs).validate()


class TestAdmm:
    def test_inactive_constraints_reach_least_squares(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((8, 4))
        b = rng.standard_normal(8)
        G = rng.standard_normal((3, 4))
        g = np.full(3, 1e6)  # never binding
        res = admm_solve(A, b, G, g, AdmmSettings(iterations=400))
        expect = np.linalg.lstsq(A, b, rcond=None)[0]
        assert np.allclose(res.s, expect, atol=1e-6)

    def test_scalar_clip(self):
        # min (s - 2)^2  s.t.  s <= 1  has the boundary solution s = 1
        A = np.array([[1.0]])
        b = np.array([2.0])
        G = np.array([[1.0]])
        g = np.array([1.0])
        res = admm_solve(A, b, G, g, AdmmSettings(iterations=500))
        assert res.s[0] == pytest.approx(1.0, abs=1e-6)
        assert res.h[0] == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("p", [1, 2, 3, 7, 50])
    def test_h_nonnegative_and_iteration_count(self, p):
        rng = np.random.default_rng(p)
        A, b, G, g = random_qp(rng, 3, 6)
        res = admm_solve(A, b, G, g, AdmmSettings(iterations=p))
        assert res.iterations_run == p
        assert res.h.min() >= 0.0

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(5)
        A, b, G, g = random_qp(rng, 4, 8)
        r1 = admm_solve(A, b, G, g)
        r2 = admm_solve(A, b, G, g)
        assert np.array_equal(r1.s, r2.s)
        assert np.array_equal(r1.h, r2.h)
        assert np.array_equal(r1.w, r2.w)

    def test_float32_mode(self):
        rng = np.random.default_rng(7)
        A, b, G, g = random_qp(rng, 3, 4)
        r32 = admm_solve(A, b, G, g, AdmmSettings(iterations=300, precision="f32"))
        assert r32.s.dtype == np.float32
        assert r32.h.dtype == np.float32
        assert r32.w.dtype == np.float32
        assert np.all(np.isfinite(r32.s))
        r64 = admm_solve(A, b, G, g, AdmmSettings(iterations=300))
        assert np.allclose(r32.s, r64.s, atol=1e-3)

    def test_singular_hessian_raises(self):
        A = np.ones((4, 3))  # rank one, no inequalities to regularize it
        b = np.ones(4)
        G = np.zeros((0, 3))
        g = np.zeros(0)
        with pytest.raises(SingularHessianError):
            admm_solve(A, b, G, g)

    def test_factorizes_once(self, monkeypatch):
        calls = []
        inner = linalg.qr_econ

        def counting(m):
            calls.append(m.shape)
            return inner(m)

        monkeypatch.setattr(solve.linalg, "qr_econ", counting)
        rng = np.random.default_rng(9)
        A, b, G, g = random_qp(rng, 3, 6)
        admm_solve(A, b, G, g, AdmmSettings(iterations=50))
        assert len(calls) == 1
        assert calls[0] == (A.shape[0] + G.shape[0], 3)

    def test_empty_inequalities_solve_least_squares(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        res = admm_solve(A, b, np.zeros((0, 3)), np.zeros(0), AdmmSettings(iterations=5))
        expect = np.linalg.lstsq(A, b, rcond=None)[0]
        assert np.allclose(res.s, expect, atol=1e-10)
        assert res.h.size == 0 and res.w.size == 0

    def test_long_run_matches_brute_force(self):
        cfg = AdmmSettings(iterations=2000)
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            A, b, G, g = random_qp(rng, 3, 5)
            res = admm_solve(A, b, G, g, cfg)
            exact = brute_force_solve(A, b, G, g)
            assert np.allclose(res.s, exact, atol=1e-6), seed

    def test_alpha1_override_changes_iterates(self):
        rng = np.random.default_rng(13)
        A, b, G, g = random_qp(rng, 3, 5)
        r_def = admm_solve(A, b, G, g, AdmmSettings(iterations=3))
        r_ovr = admm_solve(A, b, G, g, AdmmSettings(iterations=3, alpha1=0.0))
        assert not np.allclose(r_def.s, r_ovr.s)


class TestQuality:
    def test_exact_point_scores_zero(self):
        rng = np.random.default_rng(17)
        z = rng.standard_normal(4)
        C = rng.standard_normal((2, 4))
        G = rng.standard_normal((3, 4))
        q = quality(z, z, C, C @ z, G, G @ z + 1.0)
        assert q.mu_o == 0.0
        assert q.mu_f == 0.0

    def test_matches_direct_computation(self):
        rng = np.random.default_rng(19)
        z_p = rng.standard_normal(5)
        z_star = rng.standard_normal(5)
        C = rng.standard_normal((3, 5))
        e = rng.standard_normal(3)
        G = rng.standard_normal((4, 5))
        g = rng.standard_normal(4)
        q = quality(z_p, z_star, C, e, G, g)
        mu_o = np.linalg.norm(z_star - z_p) / np.linalg.norm(z_star)
        rows = []
        for i in range(3):
            rows.append(abs(C[i] @ z_p - e[i]) / np.linalg.norm(np.append(C[i], e[i])))
        for i in range(4):
            rows.append(
                max(G[i] @ z_p - g[i], 0.0) / np.linalg.norm(np.append(G[i], g[i]))
            )
        assert q.mu_o == pytest.approx(mu_o, rel=1e-12)
        assert q.mu_f == pytest.approx(max(rows), rel=1e-12)

    def test_row_scaling_invariance(self):
        # J makes mu_f invariant to scaling any single constraint row
        rng = np.random.default_rng(23)
        z_p = rng.standard_normal(4)
        C = rng.standard_normal((2, 4))
        e = rng.standard_normal(2)
        G = rng.standard_normal((2, 4))
        g = rng.standard_normal(2)
        base = feasibility_violation(z_p, C, e, G, g)
        C2, e2 = C.copy(), e.copy()
        C2[0] *= 50.0
        e2[0] *= 50.0
        again = feasibility_violation(z_p, C2, e2, G, g)
        assert again == pytest.approx(base, rel=1e-12)

    def test_zero_reference_raises_but_violation_works(self):
        z = np.zeros(3)
        C = np.eye(3)
        e = np.ones(3)
        G = np.zeros((0, 3))
        g = np.zeros(0)
        with pytest.raises(ValueError):
            quality(z, np.zeros(3), C, e, G, g)
        v = feasibility_violation(z, C, e, G, g)
        assert v == pytest.approx(1.0 / np.sqrt(2.0))

    def test_zero_row_guard(self):
        # an all-zero row scales by 1 rather than dividing by zero
        z = np.ones(2)
        C = np.zeros((1, 2))
        e = np.zeros(1)
        G = np.zeros((1, 2))
        g = np.array([-2.0])
        v = feasibility_violation(z, C, e, G, g)
        assert v == pytest.approx(2.0 / np.linalg.norm([0.0, 0.0, -2.0]))

    def test_no_constraints_zero_violation(self):
        v = feasibility_violation(np.ones(3), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))
        assert v == 0.0


class TestShiftedGeomean:
    def test_single_sample(self):
        assert shifted_geomean([3.0], 10.0) == pytest.approx(13.0)

    def test_zero_time_with_shift(self):
        assert shifted_geomean([0.0], 10.0) == pytest.approx(10.0)

    def test_plain_geomean(self):
        assert shifted_geomean([1.0, 9.0], 0.0) == pytest.approx(3.0)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            shifted_geomean([], 10.0)

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            shifted_geomean([-1.0, 2.0], 10.0)
        with pytest.raises(ValueError):
            shifted_geomean([1.0], -0.1)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1e6), min_size=1, max_size=20),
        st.floats(min_value=0.0, max_value=100.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_between_min_and_max(self, times, h_t):
        v = shifted_geomean(times, h_t)
        assert min(times) + h_t - 1e-9 <= v <= max(times) + h_t + 1e-9


class TestBruteForce:
    def test_scalar_clip(self):
        s = brute_force_solve(np.array([[1.0]]), np.array([2.0]), np.array([[1.0]]), np.array([1.0]))
        assert s[0] == pytest.approx(1.0)

    def test_unconstrained(self):
        rng = np.random.default_rng(29)
        A = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        s = brute_force_solve(A, b, np.zeros((0, 3)), np.zeros(0))
        assert np.allclose(s, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-10)

    def test_beats_sampled_feasible_points(self):
        rng = np.random.default_rng(31)
        A, b, G, g = random_qp(rng, 3, 6)
        s = brute_force_solve(A, b, G, g)
        assert (G @ s - g).max() <= 1e-8
        best = float(np.sum((A @ s - b) ** 2))
        for _ in range(200):
            cand = rng.uniform(-0.8, 0.8, size=3)  # the box is |s_i| <= 0.8
            obj = float(np.sum((A @ cand - b) ** 2))
            assert best <= obj + 1e-9


class TestPolish:
    def test_exact_from_near_guess(self):
        # min (s-2)^2 s.t. s <= 1: KKT on the active row gives s = 1, lam = 1
        out = active_set_polish(
            np.array([[1.0]]), np.array([2.0]), np.array([[1.0]]), np.array([1.0]), [0.9999999]
        )
        assert out is not None
        s, lam = out
        assert s[0] == pytest.approx(1.0)
        assert lam[0] == pytest.approx(1.0)

    def test_rejects_wrong_active_set(self):
        # guess far inside: empty active set, but the lstsq point is infeasible
        out = active_set_polish(
            np.array([[1.0]]), np.array([2.0]), np.array([[1.0]]), np.array([1.0]), [-5.0]
        )
        assert out is None

    def test_unconstrained_guess_with_feasible_minimum(self):
        rng = np.random.default_rng(43)
        A = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        G = np.eye(3)
        g = np.full(3, 1e6)
        expect = np.linalg.lstsq(A, b, rcond=None)[0]
        out = active_set_polish(A, b, G, g, expect + 1e-3)
        assert out is not None
        s, lam = out
        assert np.allclose(s, expect, atol=1e-10)
        assert np.all(lam == 0.0)

    def test_matches_brute_force_with_duals(self):
        rng = np.random.default_rng(47)
        A, b, G, g = random_qp(rng, 3, 6)
        guess = admm_solve(A, b, G, g, AdmmSettings(iterations=1500)).s
        out = active_set_polish(A, b, G, g, guess, tol=1e-5)
        assert out is not None
        s, lam = out
        assert np.allclose(s, brute_force_solve(A, b, G, g), atol=1e-8)
        # stationarity: A'(As - b) + G'lam = 0
        grad = A.T @ (A @ s - b) + G.T @ lam
        assert np.linalg.norm(grad) < 1e-7


class TestReference:
    def test_small_uses_enumeration(self):
        rng = np.random.default_rng(37)
        A, b, G, g = random_qp(rng, 3, 5)
        assert np.array_equal(
            reference_solution(A, b, G, g), brute_force_solve(A, b, G, g)
        )

    def test_large_constraint_count_falls_back(self):
        # 13 constraints exceeds the default enumeration budget of 2^12
        rng = np.random.default_rng(41)
        n = 4
        A = rng.standard_normal((8, n)) + np.vstack([np.eye(n), np.eye(n)])
        b = A @ (3.0 * rng.standard_normal(n))
        G = np.vstack([np.eye(n), -np.eye(n), rng.standard_normal((5, n))])
        g = np.concatenate([np.full(2 * n, 0.7), np.full(5, 1.5)])
        s_ref = reference_solution(A, b, G, g)
        s_exact = brute_force_solve(A, b, G, g)
        assert np.allclose(s_ref, s_exact, atol=1e-6)
