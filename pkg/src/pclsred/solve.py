"""Fixed-iteration ADMM for reduced problems plus solution-quality metrics.

The solver runs an exact number of iterations (no residual-based stopping):
the single-precision benchmark compares what a fixed budget buys on each
condensing path, so early exit would bias it.  The iteration matrix
A_r'A_r + rho G_r'G_r is factorized once per solve through the stacked QR of
[A_r; sqrt(rho) G_r]; 32-bit mode keeps every operation, the factorization
included, in float32.

The h-update position of the previous auxiliary iterate and the
alpha1 = 1 - alpha default follow from expanding standard over-relaxation;
alpha1 stays overridable in the settings.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import linalg
from .pcls import SingularHessianError

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class AdmmSettings:
    rho: float = 1.0
    alpha: float = 1.6
    iterations: int = 200
    precision: str = "f64"
    alpha1: float | None = None  # defaults to 1 - alpha

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    @property
    def alpha1_value(self) -> float:
        return (1.0 - self.alpha) if self.alpha1 is None else self.alpha1

    def validate(self) -> "AdmmSettings":
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}")
        return self


@dataclass(frozen=True)
class AdmmResult:
    s: np.ndarray
    h: np.ndarray
    w: np.ndarray
    iterations_run: int


@dataclass(frozen=True)
class QualityMetrics:
    mu_o: float
    mu_f: float


def admm_solve(A_r, b_r, G_r, g_r, settings: AdmmSettings = AdmmSettings()) -> AdmmResult:
    """Over-relaxed ADMM on min ||A_r s - b_r||^2 s.t. G_r s <= g_r.

    Splitting G_r s + h = g_r with h >= 0; runs exactly
    settings.iterations sweeps of

        s  <- (A_r'A_r + rho G_r'G_r)^{-1} (A_r'b_r - rho G_r'(h + w - g_r))
        h  <- [alpha1 h - alpha (G_r s - g_r) - w]_+
        w  <- w + alpha (G_r s + h_new - g_r) + alpha1 (h_new - h)

    and returns the final triple.
    """
    settings.validate()
    dt = settings.dtype
    A = np.asarray(A_r, dtype=dt)
    b = np.asarray(b_r, dtype=dt)
    G = np.asarray(G_r, dtype=dt)
    g = np.asarray(g_r, dtype=dt)
    n = A.shape[1]
    n_i = G.shape[0]
    rho = dt(settings.rho)
    alpha = dt(settings.alpha)
    alpha1 = dt(settings.alpha1_value)

    # one factorization for the whole solve: R'R = A'A + rho G'G
    stacked = np.vstack([A, np.sqrt(rho) * G]) if n_i else A
    _, R = linalg.qr_econ(stacked)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= d.max() * np.finfo(dt).eps * max(stacked.shape):
        raise SingularHessianError("ADMM iteration matrix is singular")

    atb = A.T @ b
    h = np.zeros(n_i, dtype=dt)
    w = np.zeros(n_i, dtype=dt)
    s = np.zeros(n, dtype=dt)
    for _ in range(settings.iterations):
        rhs = atb - rho * (G.T @ (h + w - g)) if n_i else atb
        s = linalg.solve_triu(R, linalg.solve_tril(R.T, rhs))
        resid = G @ s - g
        h_new = np.maximum(alpha1 * h - alpha * resid - w, dt(0.0))
        w = w + alpha * (resid + h_new) + alpha1 * (h_new - h)
        h = h_new
    return AdmmResult(s=s, h=h, w=w, iterations_run=settings.iterations)


def feasibility_violation(z_p, C, e, G, g) -> float:
    """Row-scaled maximum violation: max J [|C z - e|; (G z - g)_+].

    J divides each row residual by ||[row rhs]||_2; all-zero rows scale
    by 1 so a zero residual stays zero instead of 0/0.
    """
    z_p = np.asarray(z_p, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, z_p.size)
    e = np.asarray(e, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, z_p.size)
    g = np.asarray(g, dtype=float)
    eq = np.abs(C @ z_p - e) if C.shape[0] else np.zeros(0)
    iq = np.maximum(G @ z_p - g, 0.0) if G.shape[0] else np.zeros(0)
    d_eq = np.linalg.norm(np.column_stack([C, e]), axis=1) if C.shape[0] else np.zeros(0)
    d_iq = np.linalg.norm(np.column_stack([G, g]), axis=1) if G.shape[0] else np.zeros(0)
    stacked = np.concatenate([eq, iq])
    scale = np.concatenate([d_eq, d_iq])
    if stacked.size == 0:
        return 0.0
    scale = np.where(scale == 0.0, 1.0, scale)
    return float(np.max(stacked / scale))


def quality(z_p, z_star, C, e, G, g) -> QualityMetrics:
    """Optimizer error and scaled feasibility violation of a recovered point."""
    z_p = np.asarray(z_p, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    ref = np.linalg.norm(z_star)
    if ref == 0.0:
        raise ValueError("optimizer error undefined for a zero reference")
    mu_o = float(np.linalg.norm(z_star - z_p) / ref)
    return QualityMetrics(mu_o=mu_o, mu_f=feasibility_violation(z_p, C, e, G, g))


def shifted_geomean(times, h_t: float) -> float:
    """(prod (t_i + h_t))^(1/n) evaluated in log space."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise ValueError("need at least one time sample")
    if np.any(t < 0.0) or h_t < 0.0:
        raise ValueError("times and shift must be nonnegative")
    with np.errstate(divide="ignore"):
        return float(np.exp(np.mean(np.log(t + h_t))))


def brute_force_solve(A_r, b_r, G_r, g_r, tol: float = 1e-9) -> np.ndarray:
    """Exhaustive active-set reference for small strictly convex problems.

    Tries every constraint subset as the active set, solves the KKT system,
    and keeps the feasible candidate with nonnegative multipliers and the
    smallest objective.  Exponential in the constraint count by design.
    """
    A = np.asarray(A_r, dtype=float)
    b = np.asarray(b_r, dtype=float)
    G = np.asarray(G_r, dtype=float)
    g = np.asarray(g_r, dtype=float)
    n = A.shape[1]
    n_i = G.shape[0]
    gram = A.T @ A
    atb = A.T @ b
    scale = max(1.0, float(np.abs(g).max()) if n_i else 1.0)
    best = None
    best_obj = np.inf
    for size in range(n_i + 1):
        for active in combinations(range(n_i), size):
            idx = list(active)
            ga = G[idx]
            kkt = np.block([[gram, ga.T], [ga, np.zeros((size, size))]])
            rhs = np.concatenate([atb, g[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            s, lam = sol[:n], sol[n:]
            if size and lam.min() < -tol * scale:
                continue
            if n_i and (G @ s - g).max() > tol * scale:
                continue
            r = A @ s - b
            obj = float(r @ r)
            if best is None or obj < best_obj:
                best, best_obj = s, obj
    if best is None:
        raise np.linalg.LinAlgError("no active set produced a valid KKT point")
    return best


def active_set_polish(A_r, b_r, G_r, g_r, s, tol: float = 1e-7):
    """Re-solve on the active set detected at s; exact when the guess is close.

    Returns (s_polished, lambda_full) with zero multipliers off the active
    set, or None when the candidate KKT point fails the sign or feasibility
    checks (wrong active set, dependent rows).
    """
    A = np.asarray(A_r, dtype=float)
    b = np.asarray(b_r, dtype=float)
    G = np.asarray(G_r, dtype=float)
    g = np.asarray(g_r, dtype=float)
    n = A.shape[1]
    n_i = G.shape[0]
    scale = max(1.0, float(np.abs(g).max()) if n_i else 1.0)
    active = np.where(g - G @ np.asarray(s, dtype=float) <= tol * scale)[0] if n_i else np.zeros(0, int)
    lam_full = np.zeros(n_i)
    if active.size == 0:
        s_u = np.linalg.lstsq(A, b, rcond=None)[0]
        if n_i == 0 or (G @ s_u - g).max() <= tol * scale:
            return s_u, lam_full
        return None
    ga = G[active]
    kkt = np.block([[A.T @ A, ga.T], [ga, np.zeros((active.size, active.size))]])
    try:
        sol = np.linalg.solve(kkt, np.concatenate([A.T @ b, g[active]]))
    except np.linalg.LinAlgError:
        return None
    s_p, lam = sol[:n], sol[n:]
    if lam.min() < -tol * scale or (G @ s_p - g).max() > tol * scale:
        return None
    lam_full[active] = np.maximum(lam, 0.0)
    return s_p, lam_full


def reference_solution(
    A_r,
    b_r,
    G_r,
    g_r,
    enumerate_limit: int = 4096,
    iterations: int = 20000,
    polish_tol: float = 1e-7,
) -> np.ndarray:
    """Double-precision reference optimizer for benchmark instances.

    Enumerates active sets whenever 2^{n_i} fits the limit (exact for
    strictly convex problems); otherwise runs a long double-precision ADMM
    and polishes by re-solving on the detected active set, keeping the
    polish only when primal feasibility and dual signs check out.
    """
    n_i = np.asarray(G_r).shape[0]
    if n_i == 0 or 2**n_i <= enumerate_limit:
        return brute_force_solve(A_r, b_r, G_r, g_r)
    res = admm_solve(
        A_r, b_r, G_r, g_r, AdmmSettings(iterations=iterations, precision="f64")
    )
    polished = active_set_polish(A_r, b_r, G_r, g_r, res.s, tol=polish_tol)
    return polished[0] if polished is not None else res.s
