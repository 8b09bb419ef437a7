"""Random problem families for the benchmarks.

Two generators: a box-constrained least-squares family with a linear
parameter dependence in the target, and random linear MPC problems with
placed eigenvalues, rank-controlled stage weights, and randomly imposed
stage bounds.  Generators are deterministic in the spec seed; ensemble
drivers pass their own rng so redraws advance a single stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, mpc
from .mpc import LtvModel, MpcWeights
from .pcls import PClsInstance
from .reduction import SampleSet
from .solve import AdmmSettings, active_set_polish, admm_solve

EIG_RANGES = {"stable": (0.499, 0.999), "unstable": (1.0, 1.25)}


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    # qr with diag(R) >= 0 of a normal matrix is Haar distributed
    q, _ = linalg.qr_econ(rng.standard_normal((n, n)))
    return q


# ---------------------------------------------------------------------------
# box-constrained least-squares family


@dataclass(frozen=True)
class RandomPclsSpec:
    n: int = 20
    p: int = 4
    n_c: int = 20
    seed: int = 0

    def validate(self) -> "RandomPclsSpec":
        if min(self.n, self.p, self.n_c) < 1:
            raise ValueError("dimensions must be positive")
        return self


@dataclass(frozen=True)
class PclsFamily:
    """Fixed (A, G, g) with target b(theta) = b0 + F theta; unit box on z."""

    spec: RandomPclsSpec
    A: np.ndarray
    b0: np.ndarray
    F: np.ndarray
    G: np.ndarray
    g: np.ndarray

    def instance(self, theta) -> PClsInstance:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.spec.p,):
            raise ValueError(f"theta must have length {self.spec.p}")
        n = self.spec.n
        return PClsInstance(
            A=self.A,
            b=self.b0 + self.F @ theta,
            C=np.zeros((0, n)),
            e=np.zeros(0),
            G=self.G,
            g=self.g,
        )

    def collect(
        self,
        M: int,
        rng: np.random.Generator,
        eps_lambda: float = 1e-3,
        iterations: int = 4000,
        max_attempts: int | None = None,
    ) -> SampleSet:
        """Sample thetas and optimal solutions, keeping only parameters whose
        optimum has at least one active inequality (largest multiplier at or
        above eps_lambda)."""
        thetas, zs, lams = [], [], []
        cap = max_attempts if max_attempts is not None else 50 * M
        attempts = 0
        while len(zs) < M:
            attempts += 1
            if attempts > cap:
                raise RuntimeError(
                    f"dual filter rejected too many draws ({attempts - 1} attempts)"
                )
            theta = rng.standard_normal(self.spec.p)
            p = self.instance(theta)
            z, lam = solve_with_duals(p.A, p.b, p.G, p.g, iterations=iterations)
            lam_max = float(lam.max()) if lam.size else 0.0
            if lam_max < eps_lambda:
                continue
            thetas.append(theta)
            zs.append(z)
            lams.append(lam_max)
        return SampleSet(
            thetas=np.array(thetas),
            s_stars=np.array(zs),
            lambdas_max=np.array(lams),
        ).validate(eps_lambda=eps_lambda)


def gen_pcls(spec: RandomPclsSpec) -> PclsFamily:
    """Family with normal A, b0, F and the unit box G = [I; -I], g = 1."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, p, n_c = spec.n, spec.p, spec.n_c
    return PclsFamily(
        spec=spec,
        A=rng.standard_normal((n_c, n)),
        b0=rng.standard_normal(n_c),
        F=rng.standard_normal((n_c, p)),
        G=np.vstack([np.eye(n), -np.eye(n)]),
        g=np.ones(2 * n),
    )


def solve_with_duals(A, b, G, g, iterations: int = 4000):
    """Reference solve returning (z, lambda): long ADMM plus an exact
    active-set polish; the raw scaled duals are the fallback when the polish
    rejects (the filter only needs the largest multiplier)."""
    settings = AdmmSettings(iterations=iterations)
    res = admm_solve(A, b, G, g, settings)
    polished = active_set_polish(A, b, G, g, res.s)
    if polished is not None:
        return polished
    return res.s, settings.rho * np.maximum(res.w, 0.0)


# ---------------------------------------------------------------------------
# random MPC problems


@dataclass(frozen=True)
class RandomMpcSpec:
    n_x: int = 5
    n_u: int = 3
    T: int = 10
    stability: str = "stable"
    seed: int = 0
    delta: float = 1.0

    def validate(self) -> "RandomMpcSpec":
        if self.stability not in EIG_RANGES:
            raise ValueError(f"stability must be one of {sorted(EIG_RANGES)}")
        if min(self.n_x, self.n_u, self.T) < 1:
            raise ValueError("dimensions must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        return self


@dataclass(frozen=True)
class StageBounds:
    """Per-stage box template: every input is bounded on both sides, state
    channels carry +-inf where a bound is not imposed."""

    u_lo: np.ndarray
    u_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray

    @property
    def m_x(self) -> int:
        return int(np.isfinite(self.x_lo).sum() + np.isfinite(self.x_hi).sum())

    @property
    def rows_per_stage(self) -> int:
        return 2 * self.u_lo.size + self.m_x


def gen_mpc(spec: RandomMpcSpec, rng: np.random.Generator | None = None):
    """One random system: symmetric dynamics with placed real eigenvalues,
    diagonal stage weights realizing a drawn cost rank, and stage bounds.

    Returns (LtvModel, MpcWeights, StageBounds)."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lo, hi = EIG_RANGES[spec.stability]
    eigs = rng.uniform(lo, hi, spec.n_x)
    q = _random_orthogonal(rng, spec.n_x)
    a = q @ np.diag(eigs) @ q.T
    b = rng.standard_normal((spec.n_x, spec.n_u))
    model = LtvModel.lti(a, b, spec.T)
    weights = _rank_ruled_weights(rng, spec)
    bounds = _stage_bound_scheme(rng, spec)
    return model, weights, bounds


def _rank_ruled_weights(rng: np.random.Generator, spec: RandomMpcSpec) -> MpcWeights:
    """Diagonal weights whose stacked cost matrix has a drawn rank.

    rank is uniform on [floor(T n_x / 3) + T n_u, T (n_x + n_u)].  Inputs are
    always fully weighted; the state share is spread channel-first so every
    fully enabled channel keeps one value along the whole horizon, and at
    most one channel is enabled on a leading subrange of stages.
    """
    T, n_x, n_u = spec.T, spec.n_x, spec.n_u
    lo = T * n_x // 3 + T * n_u
    target = int(rng.integers(lo, T * (n_x + n_u) + 1))
    k_x = target - T * n_u
    perm = rng.permutation(n_x)
    vals_u = rng.uniform(1.0, 10.0, n_u)
    vals_x = rng.uniform(1.0, 10.0, n_x)
    q_full, rem = divmod(k_x, T)
    base = np.zeros(n_x)
    base[perm[:q_full]] = 1.0
    r_x = []
    for k in range(T):
        mask = base.copy()
        if rem and k < rem:
            mask[perm[q_full]] = 1.0
        r_x.append(np.diag(mask * vals_x))
    return MpcWeights(
        R_u_k=tuple(np.diag(vals_u) for _ in range(T)),
        R_x_k=tuple(r_x),
        u_ref_k=np.zeros((T, n_u)),
        x_ref_k=np.zeros((T, n_x)),
    ).validate()


def _stage_bound_scheme(rng: np.random.Generator, spec: RandomMpcSpec) -> StageBounds:
    """Input windows plus m_x randomly imposed state bounds, m_x uniform on
    [floor(n_x/2), floor(4 n_x/3)]; upper windows sit above the lower bound
    when one is imposed."""
    d = spec.delta
    n_x, n_u = spec.n_x, spec.n_u
    u_lo = rng.uniform(-d, d, n_u)
    u_hi = u_lo + rng.uniform(0.0, d, n_u)
    m_x = int(rng.integers(n_x // 2, (4 * n_x) // 3 + 1))
    # slot j of 2 n_x: lower bound on channel j; slot n_x + j: upper bound
    slots = set(rng.choice(2 * n_x, size=m_x, replace=False).tolist())
    x_lo = np.full(n_x, -np.inf)
    x_hi = np.full(n_x, np.inf)
    for j in range(n_x):
        if j in slots:
            x_lo[j] = rng.uniform(-d, d)
        if n_x + j in slots:
            x_hi[j] = (
                x_lo[j] + rng.uniform(0.0, d)
                if np.isfinite(x_lo[j])
                else rng.uniform(-d, d)
            )
    return StageBounds(u_lo=u_lo, u_hi=u_hi, x_lo=x_lo, x_hi=x_hi)


def stage_constraints(T: int, n_x: int, n_u: int, bounds: StageBounds):
    """Stack the per-stage template over the horizon.

    Row order per stage: input uppers, input lowers, then finite state
    uppers and lowers for x_{k+1}; z is interleaved [u_0 x_1 u_1 x_2 ...].
    """
    w = n_x + n_u
    n = T * w
    fin_hi = np.where(np.isfinite(bounds.x_hi))[0]
    fin_lo = np.where(np.isfinite(bounds.x_lo))[0]
    per_stage = 2 * n_u + fin_hi.size + fin_lo.size
    G = np.zeros((T * per_stage, n))
    g = np.zeros(T * per_stage)
    r = 0
    for k in range(T):
        u_off = k * w
        x_off = k * w + n_u
        for c in range(n_u):
            G[r, u_off + c] = 1.0
            g[r] = bounds.u_hi[c]
            r += 1
        for c in range(n_u):
            G[r, u_off + c] = -1.0
            g[r] = -bounds.u_lo[c]
            r += 1
        for j in fin_hi:
            G[r, x_off + j] = 1.0
            g[r] = bounds.x_hi[j]
            r += 1
        for j in fin_lo:
            G[r, x_off + j] = -1.0
            g[r] = -bounds.x_lo[j]
            r += 1
    return G, g


def mpc_instance(model: LtvModel, weights: MpcWeights, bounds: StageBounds, x0) -> PClsInstance:
    """Assemble the full problem: dynamics equalities, stage cost, bounds."""
    C, e = mpc.build_equality(model, x0)
    A, b = mpc.build_cost(weights)
    G, g = stage_constraints(model.T, model.n_x, model.n_u, bounds)
    return PClsInstance(A=A, b=b, C=C, e=e, G=G, g=g)


def is_feasible(p: PClsInstance) -> bool:
    """Exact phase-1 check of {C z = e, G z <= g} via an LP."""
    from scipy.optimize import linprog

    res = linprog(
        c=np.zeros(p.ell),
        A_ub=p.G if p.n_i else None,
        b_ub=p.g if p.n_i else None,
        A_eq=p.C if p.n_e else None,
        b_eq=p.e if p.n_e else None,
        bounds=(None, None),
        method="highs",
    )
    return res.status == 0


def gen_feasible_instance(
    spec: RandomMpcSpec, rng: np.random.Generator, max_redraws: int = 50
):
    """Random system, bounds, and initial state with a certified nonempty
    feasible set.  Random state windows can cut off every trajectory from a
    given x0, so infeasible draws are discarded and redrawn.

    Returns (model, weights, bounds, x0, PClsInstance)."""
    for _ in range(max_redraws):
        model, weights, bounds = gen_mpc(spec, rng)
        x0 = rng.uniform(-spec.delta, spec.delta, spec.n_x)
        p = mpc_instance(model, weights, bounds, x0)
        if is_feasible(p):
            return model, weights, bounds, x0, p
    raise RuntimeError(f"no feasible draw in {max_redraws} attempts")
