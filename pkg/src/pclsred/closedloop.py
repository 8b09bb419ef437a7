"""Receding-horizon tracking on a 2-state exothermic reactor.

The plant holds reactor temperature and concentration; the manipulated
variable is the coolant temperature.  Each control period the ODE is
linearized about the current state and previous input, discretized by one
forward-Euler step, and extended with the previous input and an affine
constant so the decision variable becomes the input increment.  The
condensed problem is softened with a single shared slack and restricted to
a short control horizon; learned subspaces (single or clustered, with a
region classifier) stack a second restriction on top of that one.

Control-horizon coordinates are the free input increments themselves, not
an orthogonal factor's mixture: their meaning is the same at every step of
the loop, so subspaces learned from one run transfer to any other state of
the plant.  The price is a non-orthonormal basis, which nothing downstream
requires.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import classifier, mpc, pcls, reduction
from .benchgen import StageBounds, stage_constraints
from .classifier import ClassifierBank
from .mpc import CondensedForm, LtvModel, MpcWeights
from .pcls import Basis, PClsInstance, ReducedPcls, SingularHessianError
from .reduction import ClusterModel, SampleSet
from .solve import AdmmSettings, active_set_polish, admm_solve

# ---------------------------------------------------------------------------
# plant


@dataclass(frozen=True)
class ReactorPlant:
    """Continuously stirred exothermic reactor, state [T_r, C_A], input T_c.

    Inflow composition c_af and feed temperature t_f follow the usual
    benchmark values; the remaining coefficients are chosen so the coolant
    range sweeps the equilibrium concentration across the reference band,
    the equilibrium map stays single-valued, and the heat release makes the
    mid-range operating points oscillatory with a mildly unstable stretch.
    That last property is deliberate: it is what makes short control
    horizons pay a visible closed-loop price.  The substep count keeps the
    integration stable through hot transients.
    """

    c_af: float = 10.0
    t_f: float = 298.15
    flow: float = 1.0
    cool: float = 3.0
    heat: float = 4.0
    ln_k0: float = 49.76
    e_over_t: float = 15000.0
    t_s: float = 0.25
    substeps: int = 16

    n_x = 2
    n_u = 1

    def rate(self, t_r: float) -> float:
        return float(np.exp(self.ln_k0 - self.e_over_t / t_r))

    def ode(self, x, u: float) -> np.ndarray:
        t_r, c_a = float(x[0]), float(x[1])
        k = self.rate(t_r)
        return np.array(
            [
                self.flow * (self.t_f - t_r)
                + self.heat * k * c_a
                + self.cool * (u - t_r),
                self.flow * (self.c_af - c_a) - k * c_a,
            ]
        )

    def linearize(self, x, u: float):
        """Analytic jacobians (A_c, B_c, f0) of the ODE at (x, u)."""
        t_r, c_a = float(x[0]), float(x[1])
        k = self.rate(t_r)
        dk = k * self.e_over_t / t_r**2
        a_c = np.array(
            [
                [-self.flow - self.cool + self.heat * dk * c_a, self.heat * k],
                [-dk * c_a, -self.flow - k],
            ]
        )
        b_c = np.array([[self.cool], [0.0]])
        return a_c, b_c, self.ode(x, u)

    def step(self, x, u: float) -> np.ndarray:
        """Advance one sample period with Euler substeps."""
        x = np.asarray(x, dtype=float)
        h = self.t_s / self.substeps
        for _ in range(self.substeps):
            x = x + h * self.ode(x, u)
        return x

    def equilibrium(self, u: float, guess=None) -> np.ndarray:
        """Steady state at constant input, by Newton on the ODE."""
        x = np.array([u, 5.0]) if guess is None else np.asarray(guess, dtype=float)
        for _ in range(100):
            a_c, _, f0 = self.linearize(x, u)
            delta = np.linalg.solve(a_c, f0)
            x = x - delta
            if np.linalg.norm(delta) < 1e-13 * max(1.0, np.linalg.norm(x)):
                return x
        raise np.linalg.LinAlgError("equilibrium iteration did not converge")


def lpv_model(plant: ReactorPlant, x, u_prev: float, T: int):
    """Extended single-step Euler model in the increment input.

    State [x; u_prev; 1]: the affine linearization offset rides on the
    constant channel and the input magnitude becomes a state, so increment
    bounds are input bounds and magnitude bounds are state bounds.

    Returns (LtvModel, x0_hat).
    """
    a_c, b_c, f0 = plant.linearize(x, u_prev)
    n_x, n_u = plant.n_x, plant.n_u
    x = np.asarray(x, dtype=float)
    c_c = f0 - a_c @ x - (b_c * u_prev).ravel()
    ts = plant.t_s
    a_hat = np.block(
        [
            [np.eye(n_x) + ts * a_c, ts * b_c, ts * c_c[:, None]],
            [np.zeros((n_u, n_x)), np.eye(n_u), np.zeros((n_u, 1))],
            [np.zeros((1, n_x + n_u)), np.ones((1, 1))],
        ]
    )
    b_hat = np.vstack([ts * b_c, np.eye(n_u), np.zeros((1, n_u))])
    x0_hat = np.concatenate([x, [u_prev], [1.0]])
    return LtvModel.lti(a_hat, b_hat, T), x0_hat


def tracking_weights(T: int, ref_next: float, q_track: float, r_du: float) -> MpcWeights:
    """Concentration tracking plus increment damping over the horizon.

    Only the one-step-ahead reference is known, so every stage targets it.
    """
    r_x = np.array([[0.0, np.sqrt(q_track), 0.0, 0.0]])
    x_ref = np.tile([0.0, ref_next, 0.0, 0.0], (T, 1))
    return MpcWeights.constant(
        np.array([[np.sqrt(r_du)]]), r_x, T, x_ref=x_ref
    ).validate()


# ---------------------------------------------------------------------------
# bases


def control_horizon_basis(cond: CondensedForm, n_x: int, n_u: int, n_free: int) -> Basis:
    """Restrict the condensed coordinates to the first n_free inputs.

    Input rows of the recovery transform form a square map from s to the
    stacked inputs, so s = P^{-1}(E v - o) parameterizes exactly the
    trajectories whose inputs vanish from stage n_free on, with v equal to
    the leading inputs verbatim.
    """
    Z, offset = cond.transform_Z, cond.transform_offset
    w = n_x + n_u
    T, rem = divmod(Z.shape[0], w)
    if rem or Z.shape[1] != T * n_u:
        raise ValueError("transform is not an input-parameterized condensing")
    if not 1 <= n_free <= T:
        raise ValueError(f"need 1 <= n_free <= {T}")
    idx = [k * w + c for k in range(T) for c in range(n_u)]
    P = Z[idx]
    rhs = np.hstack(
        [-offset[idx][:, None], np.eye(T * n_u, n_free * n_u)]
    )
    sol = np.linalg.solve(P, rhs)
    return Basis(phi0=sol[:, 0], Phi=sol[:, 1:])


def append_free_coords(basis: Basis, extra: int) -> Basis:
    """Extend a basis with pass-through coordinates for appended variables."""
    n, m = basis.n, basis.m
    phi = np.zeros((n + extra, m + extra))
    phi[:n, :m] = basis.Phi
    phi[n:, m:] = np.eye(extra)
    return Basis(phi0=np.concatenate([basis.phi0, np.zeros(extra)]), Phi=phi)


def compose(outer: Basis, inner: Basis) -> Basis:
    """Basis for s = outer(inner(c))."""
    if inner.n != outer.m:
        raise ValueError("inner basis dimension does not match outer coordinates")
    return Basis(
        phi0=outer.phi0 + outer.Phi @ inner.phi0,
        Phi=outer.Phi @ inner.Phi,
    )


def descale_basis(basis: Basis, k: int, tau: float) -> Basis:
    """Map a basis learned on tau-weighted samples back to plain coordinates."""
    phi = np.array(basis.Phi, copy=True)
    phi[:k] /= tau
    return Basis(phi0=pcls.tau_unscale_offset(basis.phi0, k, tau), Phi=phi)


def restrict(cond: CondensedForm, basis: Basis) -> ReducedPcls:
    """Apply s = phi0 + Phi v to a condensed problem."""
    return ReducedPcls(
        A_r=cond.A_r @ basis.Phi,
        b_r=cond.b_r - cond.A_r @ basis.phi0,
        G_r=cond.G_r @ basis.Phi,
        g_r=cond.g_r - cond.G_r @ basis.phi0,
    )


# ---------------------------------------------------------------------------
# scenario and loop


@dataclass(frozen=True)
class ReductionConfig:
    """What runs inside the loop: the control-horizon restriction alone
    ("exact" keeps every stage), or a learned subspace stacked on it."""

    kind: str = "control_horizon"
    n_free: int = 3
    m: int | None = None
    K: int | None = None
    tau: float = 20.0

    def validate(self) -> "ReductionConfig":
        kinds = ("exact", "control_horizon", "svd", "ksvd")
        if self.kind not in kinds:
            raise ValueError(f"kind must be one of {kinds}")
        if self.kind != "exact" and self.n_free < 1:
            raise ValueError("n_free must be positive")
        if self.kind in ("svd", "ksvd") and not self.m:
            raise ValueError(f"{self.kind} needs a subspace dimension m")
        if self.kind == "ksvd" and not self.K:
            raise ValueError("ksvd needs a cluster count K")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        return self


@dataclass(frozen=True)
class ClosedLoopScenario:
    plant: ReactorPlant
    refs: np.ndarray
    N: int
    x0: np.ndarray
    u_prev0: float
    T: int = 20
    q_track: float = 1.0
    r_du: float = 0.01
    du_limit: float = 3.0
    u_min: float = 285.15
    u_max: float = 312.15
    slack_weight: float = 1e5
    admm_iterations: int = 2000

    def validate(self) -> "ClosedLoopScenario":
        if self.N < 1 or self.T < 1:
            raise ValueError("N and T must be positive")
        if len(self.refs) < self.N + 1:
            raise ValueError(f"need at least N+1 = {self.N + 1} reference values")
        if not self.u_min <= self.u_prev0 <= self.u_max:
            raise ValueError("initial input outside its bounds")
        return self


@dataclass
class ClosedLoopResult:
    states: np.ndarray
    inputs: np.ndarray
    refs_used: np.ndarray
    cluster_index: np.ndarray
    solve_times: np.ndarray
    thetas: np.ndarray
    vstars: np.ndarray
    lambdas: np.ndarray
    J: float
    aborted_at: int | None = None


@dataclass(frozen=True)
class TrainedReduction:
    """Subspaces fitted to one training run, in tau-weighted coordinates."""

    config: ReductionConfig
    samples: SampleSet | None = None
    basis: Basis | None = None
    clusters: ClusterModel | None = None
    bank: ClassifierBank | None = None


def random_step_reference(
    length: int, seed: int, lo: float = 2.0, hi: float = 9.0, switch: float = 0.1
) -> np.ndarray:
    """Piecewise-constant reference: each step keeps the level or redraws it
    uniformly with the switch probability."""
    rng = np.random.default_rng(seed)
    refs = np.empty(length)
    level = rng.uniform(lo, hi)
    for i in range(length):
        if i > 0 and rng.uniform() < switch:
            level = rng.uniform(lo, hi)
        refs[i] = level
    return refs


def _increment_bounds(scen: ClosedLoopScenario) -> StageBounds:
    # magnitude window on the extended-state input channel, increment window
    # on the actual decision variable
    return StageBounds(
        u_lo=np.array([-scen.du_limit]),
        u_hi=np.array([scen.du_limit]),
        x_lo=np.array([-np.inf, -np.inf, scen.u_min, -np.inf]),
        x_hi=np.array([np.inf, np.inf, scen.u_max, np.inf]),
    )


def _condense_step(scen: ClosedLoopScenario, x, u_prev: float, ref_next: float):
    """One step's softened condensed problem plus the slack-free transform."""
    plant = scen.plant
    model, x0_hat = lpv_model(plant, x, u_prev, scen.T)
    weights = tracking_weights(scen.T, ref_next, scen.q_track, scen.r_du)
    A, b = mpc.build_cost(weights)
    bounds = _increment_bounds(scen)
    n_xe, n_ue = model.n_x, model.n_u
    G, g = stage_constraints(scen.T, n_xe, n_ue, bounds)
    C, e = mpc.build_equality(model, x0_hat)
    p = PClsInstance(A=A, b=b, C=C, e=e, G=G, g=g)
    soft = pcls.soften(p, np.arange(p.n_i), scen.slack_weight, n_bar_zeta=1)
    cond = mpc.condense_qr(model, x0_hat, A, b, G, g)
    return mpc.extend_slack(cond, soft), cond


def _step_basis(
    cond: CondensedForm,
    config: ReductionConfig,
    trained: TrainedReduction | None,
    theta,
    n_xe: int,
    n_ue: int,
    T: int,
) -> tuple[Basis, int]:
    """Compose the per-step restriction; returns (basis, cluster index).

    The learned bases act on the free increments only; the slack stays an
    always-free coordinate appended outside them, so a small m never costs
    the ability to open the soft constraints."""
    n_free = T if config.kind == "exact" else config.n_free
    ch = control_horizon_basis(cond, n_xe, n_ue, n_free)
    if config.kind in ("exact", "control_horizon"):
        return append_free_coords(ch, 1), -1
    if trained is None:
        raise ValueError(f"{config.kind} requires a trained reduction")
    if config.kind == "svd":
        inner, cluster = trained.basis, -1
    else:
        cluster = classifier.predict(trained.bank, np.asarray(theta))
        inner = trained.clusters.bases[cluster]
    learned = compose(ch, descale_basis(inner, n_ue, config.tau))
    return append_free_coords(learned, 1), cluster


def _solve_reduced(r: ReducedPcls, iterations: int):
    """Reduced solve: closed form when no inequality binds, otherwise ADMM on
    column-equilibrated data with an exact active-set polish.

    Equilibration is load-bearing here: the slack channel's weight and the
    tau-descaled columns spread the column norms over orders of magnitude.
    Column scaling leaves the inequality rows, hence the multipliers, alone.
    """
    try:
        s_u, feasible = pcls.unconstrained_solution(r)
        if feasible:
            return s_u, 0.0
    except SingularHessianError:
        pass
    d = np.linalg.norm(np.vstack([r.A_r, r.G_r]), axis=0)
    d = np.where(d == 0.0, 1.0, d)
    a_s, g_s = r.A_r / d, r.G_r / d
    settings = AdmmSettings(iterations=iterations)
    res = admm_solve(a_s, r.b_r, g_s, r.g_r, settings)
    polished = active_set_polish(a_s, r.b_r, g_s, r.g_r, res.s)
    if polished is not None:
        v_s, lam = polished
    else:
        v_s, lam = res.s, settings.rho * np.maximum(res.w, 0.0)
    lam_max = float(lam.max()) if lam.size else 0.0
    return v_s / d, lam_max


def closed_loop(
    scen: ClosedLoopScenario,
    config: ReductionConfig,
    trained: TrainedReduction | None = None,
) -> ClosedLoopResult:
    """Run the receding-horizon loop; a solver failure aborts with the step
    index recorded and the accumulated cost marked invalid."""
    scen.validate()
    config.validate()
    plant = scen.plant
    N = scen.N
    x = np.asarray(scen.x0, dtype=float)
    u_prev = float(scen.u_prev0)
    states = np.zeros((N + 1, plant.n_x))
    states[0] = x
    inputs = np.zeros(N)
    clusters = np.full(N, -1, dtype=int)
    times = np.zeros(N)
    thetas = np.zeros((N, 5))
    vstars: list[np.ndarray] = []
    lambdas = np.zeros(N)
    refs = np.asarray(scen.refs, dtype=float)
    J = 0.0
    aborted_at = None
    for k in range(N):
        ref_now = refs[k]
        ref_next = refs[k + 1] if k + 1 < len(refs) else refs[-1]
        theta = np.array([x[0], x[1], u_prev, ref_now, ref_next])
        thetas[k] = theta
        t0 = time.perf_counter()
        try:
            cond_ext, cond = _condense_step(scen, x, u_prev, ref_next)
            basis, clusters[k] = _step_basis(
                cond, config, trained, theta, 4, 1, scen.T
            )
            v, lambdas[k] = _solve_reduced(
                restrict(cond_ext, basis), scen.admm_iterations
            )
        except np.linalg.LinAlgError:
            aborted_at = k
            J = float("nan")
            break
        times[k] = time.perf_counter() - t0
        vstars.append(v)
        z_ext = cond_ext.recover(basis.phi0 + basis.Phi @ v)
        du = float(z_ext[0])
        # actuator saturation on the plant side; the slack can let the
        # optimizer overshoot the window by a hair
        u = float(np.clip(u_prev + du, scen.u_min, scen.u_max))
        J += scen.q_track * (x[1] - ref_now) ** 2 + scen.r_du * (u - u_prev) ** 2
        x = plant.step(x, u)
        states[k + 1] = x
        inputs[k] = u
        u_prev = u
    if aborted_at is None:
        J += scen.q_track * (states[N][1] - refs[N]) ** 2
    return ClosedLoopResult(
        states=states,
        inputs=inputs,
        refs_used=refs[: N + 1].copy(),
        cluster_index=clusters,
        solve_times=times,
        thetas=thetas,
        vstars=np.array(vstars) if vstars else np.zeros((0, 0)),
        lambdas=lambdas,
        J=J,
        aborted_at=aborted_at,
    )


def collect_samples(
    scen: ClosedLoopScenario,
    config: ReductionConfig,
    M: int = 2000,
    seed: int = 0,
) -> SampleSet:
    """Run the control-horizon controller for M steps and log (theta, v*).

    The training references come from the seed, so the split from any
    evaluation scenario is by seed choice.
    """
    train_scen = replace(
        scen, N=M, refs=random_step_reference(M + 1, seed)
    ).validate()
    base = ReductionConfig(kind="control_horizon", n_free=config.n_free, tau=config.tau)
    run = closed_loop(train_scen, base)
    if run.aborted_at is not None:
        raise RuntimeError(f"training run aborted at step {run.aborted_at}")
    return SampleSet(
        thetas=run.thetas, s_stars=run.vstars, lambdas_max=run.lambdas
    ).validate()


def fit_reduction(
    samples: SampleSet,
    config: ReductionConfig,
    seed: int = 0,
    epochs: int = 1500,
    n_slack: int = 1,
) -> TrainedReduction:
    """Fit the configured subspace to collected samples.

    The trailing n_slack coordinates are the soft-constraint channel and are
    dropped before fitting: the slack rejoins the reduced problem as its own
    free coordinate, so the basis should spend all of m on the increments.
    Those are tau-weighted first, since reconstructing the first increment
    well is what the receding horizon actually uses.  One sample set can
    serve several fits (svd and ksvd bases of different sizes).
    """
    config.validate()
    if config.kind not in ("svd", "ksvd"):
        raise ValueError("training applies to the svd and ksvd reductions")
    incr = samples.s_stars[:, : samples.s_stars.shape[1] - n_slack]
    weighted = SampleSet(
        thetas=samples.thetas,
        s_stars=pcls.tau_scale_samples(incr, 1, config.tau),
        lambdas_max=samples.lambdas_max,
    )
    if config.kind == "svd":
        return TrainedReduction(
            config=config,
            samples=samples,
            basis=reduction.svd_basis(weighted, config.m),
        )
    model = reduction.ksvd(weighted, [config.m] * config.K, seed=seed)
    bank = classifier.train_bank(
        samples.thetas,
        model.assignments,
        hidden_sizes=(10, 10, 6),
        epochs=epochs,
        seed=seed,
    )
    return TrainedReduction(
        config=config, samples=samples, clusters=model, bank=bank
    )


def train_reduction(
    scen: ClosedLoopScenario,
    config: ReductionConfig,
    M: int = 2000,
    seed: int = 0,
    epochs: int = 1500,
) -> TrainedReduction:
    """Collect samples from one long control-horizon run and fit to them."""
    config.validate()
    if config.kind not in ("svd", "ksvd"):
        raise ValueError("training applies to the svd and ksvd reductions")
    samples = collect_samples(scen, config, M=M, seed=seed)
    return fit_reduction(samples, config, seed=seed, epochs=epochs)
