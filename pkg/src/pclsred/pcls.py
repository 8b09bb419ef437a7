"""Constrained least-squares instances and equality elimination.

A pCLS instance is

    min_z ||A z - b||^2   s.t.  C z = e,  G z <= g,

materialized for one parameter value. Equality constraints are removed by a
QR factorization of C': with Q = [Q1 Q2] and R1 the leading triangle,
z = Q2 s + z_bar parameterizes the feasible set, and z_bar = Q1 (R1')^{-1} e
is the minimum-norm particular solution. The reduced problem keeps only the
inequality constraints.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg


class RankDeficientError(np.linalg.LinAlgError):
    """Equality constraints are not linearly independent."""

    def __init__(self, detected_rank: int, expected: int):
        self.detected_rank = detected_rank
        self.expected = expected
        super().__init__(
            f"equality constraint matrix has rank {detected_rank} < {expected}"
        )


class InfeasibleError(ValueError):
    """The constraint system admits no solution within tolerance."""


class SingularHessianError(np.linalg.LinAlgError):
    """A_r is column-rank deficient, so the unconstrained solution is undefined."""


@dataclass(frozen=True)
class PClsInstance:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    e: np.ndarray
    G: np.ndarray
    g: np.ndarray

    @property
    def ell(self) -> int:
        return self.A.shape[1]

    @property
    def n_c(self) -> int:
        return self.A.shape[0]

    @property
    def n_e(self) -> int:
        return self.C.shape[0]

    @property
    def n_i(self) -> int:
        return self.G.shape[0]

    def validate(self) -> "PClsInstance":
        ell = self.ell
        if self.A.shape != (self.n_c, ell) or self.b.shape != (self.n_c,):
            raise ValueError("cost dimensions inconsistent")
        if self.C.shape != (self.n_e, ell) or self.e.shape != (self.n_e,):
            raise ValueError("equality dimensions inconsistent")
        if self.G.shape != (self.n_i, ell) or self.g.shape != (self.n_i,):
            raise ValueError("inequality dimensions inconsistent")
        if self.n_e > ell:
            raise ValueError("more equalities than variables")
        return self

    def objective(self, z: np.ndarray) -> float:
        r = self.A @ z - self.b
        return float(r @ r)

    def astype(self, dtype) -> "PClsInstance":
        return PClsInstance(
            *(np.asarray(f, dtype=dtype) for f in (self.A, self.b, self.C, self.e, self.G, self.g))
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "A": self.A.tolist(),
                "b": self.b.tolist(),
                "C": self.C.tolist(),
                "e": self.e.tolist(),
                "G": self.G.tolist(),
                "g": self.g.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str, dtype=np.float64) -> "PClsInstance":
        d = json.loads(text)
        ell = len(d["A"][0]) if d["A"] else 0
        inst = PClsInstance(
            A=np.asarray(d["A"], dtype=dtype).reshape(-1, ell),
            b=np.asarray(d["b"], dtype=dtype),
            C=np.asarray(d["C"], dtype=dtype).reshape(-1, ell),
            e=np.asarray(d["e"], dtype=dtype),
            G=np.asarray(d["G"], dtype=dtype).reshape(-1, ell),
            g=np.asarray(d["g"], dtype=dtype),
        )
        return inst.validate()


@dataclass(frozen=True)
class EqElimination:
    Q1: np.ndarray
    Q2: np.ndarray
    R1: np.ndarray
    s_bar: np.ndarray
    z_bar: np.ndarray

    def recover(self, s: np.ndarray) -> np.ndarray:
        """Map reduced coordinates back to the original variables."""
        return self.Q2 @ s + self.z_bar


@dataclass(frozen=True)
class ReducedPcls:
    A_r: np.ndarray
    b_r: np.ndarray
    G_r: np.ndarray
    g_r: np.ndarray

    @property
    def n(self) -> int:
        return self.A_r.shape[1]

    def objective(self, s: np.ndarray) -> float:
        r = self.A_r @ s - self.b_r
        return float(r @ r)


@dataclass(frozen=True)
class Basis:
    """Affine parameterization s = phi0 + Phi v of the reduced variables."""

    phi0: np.ndarray
    Phi: np.ndarray

    @property
    def m(self) -> int:
        return self.Phi.shape[1]

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    def validate(self, tol: float = 1e-10) -> "Basis":
        gram = self.Phi.T @ self.Phi
        if np.linalg.norm(gram - np.eye(self.m, dtype=gram.dtype)) > tol * max(1, self.m):
            raise ValueError("basis columns are not orthonormal")
        return self


def _reduce(p: PClsInstance, elim: EqElimination) -> ReducedPcls:
    return ReducedPcls(
        A_r=p.A @ elim.Q2,
        b_r=p.b - p.A @ elim.z_bar,
        G_r=p.G @ elim.Q2,
        g_r=p.g - p.G @ elim.z_bar,
    )


def eliminate_equalities(p: PClsInstance) -> tuple[EqElimination, ReducedPcls]:
    """Remove C z = e through a full QR of C'.

    z_bar is the minimum-norm solution of the equalities, and columns of Q2
    span ker(C), so z = Q2 s + z_bar covers exactly the feasible set.
    Raises RankDeficientError when rank(C) < n_e.
    """
    ell, n_e = p.ell, p.n_e
    dtype = p.A.dtype
    if n_e == 0:
        elim = EqElimination(
            Q1=np.zeros((ell, 0), dtype),
            Q2=np.eye(ell, dtype=dtype),
            R1=np.zeros((0, 0), dtype),
            s_bar=np.zeros(0, dtype),
            z_bar=np.zeros(ell, dtype),
        )
        return elim, _reduce(p, elim)
    _, _, _, rank = linalg.qr_rank_revealing(p.C.T)
    if rank < n_e:
        raise RankDeficientError(rank, n_e)
    q, r = linalg.qr_full(p.C.T)
    r1 = r[:n_e, :n_e]
    s_bar = linalg.solve_tril(r1.T, p.e)
    q1 = q[:, :n_e]
    elim = EqElimination(
        Q1=q1, Q2=q[:, n_e:], R1=r1, s_bar=s_bar, z_bar=q1 @ s_bar
    )
    return elim, _reduce(p, elim)


def eliminate_equalities_rank_deficient(
    p: PClsInstance, eps: float | None = None
) -> tuple[EqElimination, ReducedPcls]:
    """Elimination via rank-revealing QR for possibly dependent equalities.

    The free-variable dimension grows to ell - rank(C). Raises
    InfeasibleError when the equalities are inconsistent: the particular
    solution built from the leading block leaves a residual above eps.
    """
    if p.n_e == 0:
        return eliminate_equalities(p)
    if eps is None:
        eps = linalg.default_rank_eps(p.C)
    q, r, perm, rank = linalg.qr_rank_revealing(p.C.T, eps=eps)
    r11 = r[:rank, :rank]
    s_bar = linalg.solve_tril(r11.T, p.e[perm[:rank]])
    q1 = q[:, :rank]
    z_bar = q1 @ s_bar
    residual = np.linalg.norm(p.C @ z_bar - p.e)
    if residual > max(eps, 1e2 * np.finfo(p.C.dtype).eps * (1.0 + np.linalg.norm(p.e))):
        raise InfeasibleError(
            f"equality system inconsistent: residual {residual:.3e} > {eps:.3e}"
        )
    elim = EqElimination(Q1=q1, Q2=q[:, rank:], R1=r11, s_bar=s_bar, z_bar=z_bar)
    return elim, _reduce(p, elim)


def feasibility_tolerance(g: np.ndarray) -> np.ndarray:
    """Per-row inequality tolerance: 1e-8 absolute plus 1e-8 relative to |g_i|."""
    return 1e-8 + 1e-8 * np.abs(g)


def unconstrained_solution(r: ReducedPcls) -> tuple[np.ndarray, bool]:
    """Least-squares minimizer ignoring inequalities, plus a feasibility flag.

    Solved through a QR of A_r instead of the normal equations so the
    conditioning is kappa(A_r), not its square.
    """
    q, rr = linalg.qr_econ(r.A_r)
    diag = np.abs(np.diag(rr))
    if r.n > 0 and (diag.min() <= linalg.default_rank_eps(r.A_r)):
        raise SingularHessianError("A_r is column-rank deficient")
    s_u = linalg.solve_triu(rr, q.T @ r.b_r) if r.n > 0 else np.zeros(0, r.A_r.dtype)
    feasible = bool(np.all(r.G_r @ s_u <= r.g_r + feasibility_tolerance(r.g_r)))
    return s_u, feasible


@dataclass(frozen=True)
class ReducedVProblem:
    """Reduced problem over basis coordinates v, with recovery data."""

    A_v: np.ndarray
    b_v: np.ndarray
    G_v: np.ndarray
    g_v: np.ndarray
    W: np.ndarray  # Q2 @ Phi, maps v to z offsets
    z0: np.ndarray

    @property
    def m(self) -> int:
        return self.A_v.shape[1]

    def recover_z(self, v: np.ndarray) -> np.ndarray:
        return self.W @ v + self.z0


def apply_basis(r: ReducedPcls, basis: Basis, elim: EqElimination) -> ReducedVProblem:
    """Restrict the reduced problem to s = phi0 + Phi v."""
    if basis.n != r.n:
        raise ValueError(f"basis dimension {basis.n} != reduced dimension {r.n}")
    return ReducedVProblem(
        A_v=r.A_r @ basis.Phi,
        b_v=r.b_r - r.A_r @ basis.phi0,
        G_v=r.G_r @ basis.Phi,
        g_v=r.g_r - r.G_r @ basis.phi0,
        W=elim.Q2 @ basis.Phi,
        z0=elim.z_bar + elim.Q2 @ basis.phi0,
    )


def feasible_basis(basis: Basis, s_f: np.ndarray, s_mean: np.ndarray) -> Basis:
    """Re-anchor a basis at a feasible point with one extra degree of freedom.

    The parameterization becomes s = s_f + v0 (s_mean - s_f) + sum v_i phi_i,
    so v = 0 is the feasible point and (v0=1, v) recovers the original
    mean-anchored parameterization. The leading column is a feasibility
    direction, not a unit vector; it is dropped (with a warning) when s_f
    coincides with the sample mean.
    """
    d = s_mean - s_f
    scale = max(1.0, float(np.linalg.norm(s_f)), float(np.linalg.norm(s_mean)))
    if np.linalg.norm(d) <= np.finfo(d.dtype).eps * scale * d.size:
        warnings.warn("feasible_basis: s_f equals the sample mean; extra column dropped")
        return Basis(phi0=s_f, Phi=basis.Phi)
    return Basis(phi0=s_f, Phi=np.column_stack([d, basis.Phi]))


@dataclass(frozen=True)
class SoftenedPcls:
    base: PClsInstance
    V_g: np.ndarray
    Lambda_zeta: np.ndarray
    E_zeta: np.ndarray

    @property
    def n_slack(self) -> int:
        return self.V_g.shape[1]

    def extended(self) -> PClsInstance:
        """pCLS over [z; zeta] with slack penalties on the diagonal."""
        p, nz = self.base, self.n_slack
        dtype = p.A.dtype
        a_ext = np.block(
            [
                [p.A, np.zeros((p.n_c, nz), dtype)],
                [np.zeros((nz, p.ell), dtype), self.Lambda_zeta],
            ]
        )
        return PClsInstance(
            A=a_ext,
            b=np.concatenate([p.b, np.zeros(nz, dtype)]),
            C=np.hstack([p.C, np.zeros((p.n_e, nz), dtype)]),
            e=p.e,
            G=np.hstack([p.G, -self.V_g]),
            g=p.g,
        )


def soften(
    p: PClsInstance,
    rows: np.ndarray,
    weights: np.ndarray | float,
    n_bar_zeta: int | None = None,
) -> SoftenedPcls:
    """Soften the selected inequality rows with shared slack variables.

    n_bar_zeta groups the |rows| slacks into fewer shared ones through the
    binary selector E_zeta (contiguous grouping); n_bar_zeta = 1 shares a
    single slack across every softened row.
    """
    rows = np.asarray(rows, dtype=int)
    n_zeta = rows.size
    if n_zeta == 0:
        raise ValueError("soften requires a nonempty row set")
    if n_bar_zeta is None:
        n_bar_zeta = n_zeta
    if not 1 <= n_bar_zeta <= n_zeta:
        raise ValueError("need 1 <= n_bar_zeta <= len(rows)")
    dtype = p.A.dtype
    e_zeta = np.zeros((n_zeta, n_bar_zeta), dtype)
    for j in range(n_zeta):
        e_zeta[j, j * n_bar_zeta // n_zeta] = 1.0
    v_g = np.zeros((p.n_i, n_bar_zeta), dtype)
    v_g[rows] = e_zeta
    w = np.broadcast_to(np.asarray(weights, dtype), (n_bar_zeta,))
    if np.any(w <= 0):
        raise ValueError("slack weights must be positive")
    return SoftenedPcls(
        base=p, V_g=v_g, Lambda_zeta=np.diag(w).astype(dtype), E_zeta=e_zeta
    )


def eliminate_preserving(
    p: PClsInstance, k: int
) -> tuple[EqElimination, ReducedPcls]:
    """Eliminate equalities while keeping the first k variables as themselves.

    With z = [z1; z2] and a QR of C2', the transform
        z = [[I, 0], [-Qb1 (Rb1')^{-1} C1, Qb2]] s + [0; Qb1 (Rb1')^{-1} e]
    satisfies C z = e for every s = [z1; s2], so reduced coordinates start
    with z1 verbatim. The returned Q2 is a nullspace basis but not
    orthonormal.
    """
    if k == 0:
        return eliminate_equalities(p)
    ell, n_e = p.ell, p.n_e
    if not 0 < k <= ell - n_e:
        raise ValueError(f"need 0 < k <= ell - n_e = {ell - n_e}")
    c1, c2 = p.C[:, :k], p.C[:, k:]
    dtype = p.A.dtype
    if n_e == 0:
        qb = np.eye(ell - k, dtype=dtype)
        rb = np.zeros((ell - k, 0), dtype)
    else:
        _, _, _, rank = linalg.qr_rank_revealing(c2.T)
        if rank < n_e:
            raise RankDeficientError(rank, n_e)
        qb, rb = linalg.qr_full(c2.T)
    rb1 = rb[:n_e, :n_e]
    qb1, qb2 = qb[:, :n_e], qb[:, n_e:]
    s_bar = linalg.solve_tril(rb1.T, p.e) if n_e > 0 else np.zeros(0, dtype)
    t = linalg.solve_tril(rb1.T, c1) if n_e > 0 else np.zeros((0, k), dtype)
    q2 = np.block(
        [
            [np.eye(k, dtype=dtype), np.zeros((k, ell - k - n_e), dtype)],
            [-qb1 @ t, qb2],
        ]
    )
    elim = EqElimination(
        Q1=np.vstack([np.zeros((k, n_e), dtype), qb1]),
        Q2=q2,
        R1=rb1,
        s_bar=s_bar,
        z_bar=np.concatenate([np.zeros(k, dtype), qb1 @ s_bar]),
    )
    return elim, _reduce(p, elim)


def tau_scale_samples(samples: np.ndarray, k: int, tau: float) -> np.ndarray:
    """Weight the first k components of each sample row by tau (tau >= 1)."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    out = np.array(samples, copy=True)
    out[:, :k] *= tau
    return out


def tau_unscale_offset(phi0: np.ndarray, k: int, tau: float) -> np.ndarray:
    """Undo the sample weighting on a basis offset's first k components."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    out = np.array(phi0, copy=True)
    out[:k] /= tau
    return out
