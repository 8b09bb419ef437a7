"""MPC-structured constrained least squares: banded equality constraints,
three condensing routines, and a structured QR factorization with exact flop
accounting.

Variable ordering is interleaved, z = [u_0' x_1' u_1' x_2' ... u_{T-1}' x_T']',
ell = T*(n_x+n_u); every structure index in this module depends on it.

Flop bookkeeping conventions, chosen per phase so the counters reproduce the
per-term accounting they are tested against:

  * Givens rotations cost 6 flops per 2-vector application; computing the
    (c, s) pair is not counted.
  * Dense-path products (standard condensing) use the per-entry 2k-1 rule:
    an (m x k) @ (k x p) product costs m*p*(2k-1).
  * Factor-sparsity products (QR condensing) use the 2*nnz rule: a block
    product costs 2 * rows * cols.
  * Inequality reformulation is counted under its own phase and excluded
    from the structured totals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import linalg
from .pcls import Basis, RankDeficientError, ReducedPcls, SoftenedPcls


@dataclass
class FlopCounter:
    """Per-phase flop counts; total is always the sum of the breakdown."""

    breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.breakdown.values())

    def add(self, phase: str, count: int) -> None:
        self.breakdown[phase] = self.breakdown.get(phase, 0) + int(count)

    def merge(self, other: "FlopCounter") -> None:
        for phase, count in other.breakdown.items():
            self.add(phase, count)


def _mm_flops(m: int, k: int, p: int) -> int:
    # dense product rule: one multiply-accumulate chain of length k per entry
    return m * p * (2 * k - 1)


@dataclass(frozen=True)
class LtvModel:
    """x_{k+1} = A_k x_k + B_k u_k over a horizon of T steps."""

    A_k: np.ndarray  # (T, n_x, n_x)
    B_k: np.ndarray  # (T, n_x, n_u)

    @property
    def T(self) -> int:
        return self.A_k.shape[0]

    @property
    def n_x(self) -> int:
        return self.A_k.shape[1]

    @property
    def n_u(self) -> int:
        return self.B_k.shape[2]

    @property
    def ell(self) -> int:
        return self.T * (self.n_x + self.n_u)

    @property
    def is_lti(self) -> bool:
        return bool(
            np.all(self.A_k == self.A_k[0]) and np.all(self.B_k == self.B_k[0])
        )

    def validate(self) -> "LtvModel":
        T, n_x = self.A_k.shape[0], self.A_k.shape[1]
        if self.A_k.ndim != 3 or self.A_k.shape != (T, n_x, n_x):
            raise ValueError("A_k must be T square matrices")
        if self.B_k.ndim != 3 or self.B_k.shape[:2] != (T, n_x):
            raise ValueError("B_k must be T matrices with n_x rows")
        if T < 1:
            raise ValueError("horizon must be at least 1")
        return self

    @staticmethod
    def from_blocks(A_list, B_list) -> "LtvModel":
        return LtvModel(
            A_k=np.asarray(A_list, dtype=float), B_k=np.asarray(B_list, dtype=float)
        ).validate()

    @staticmethod
    def lti(A: np.ndarray, B: np.ndarray, T: int) -> "LtvModel":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        return LtvModel(
            A_k=np.broadcast_to(A, (T,) + A.shape).copy(),
            B_k=np.broadcast_to(B, (T,) + B.shape).copy(),
        ).validate()


@dataclass(frozen=True)
class MpcWeights:
    """Stage weights and references: R_u_k for u_0..u_{T-1}, R_x_k for
    x_1..x_T.  Weight blocks may be rectangular (fewer rows than columns);
    references are full length."""

    R_u_k: tuple
    R_x_k: tuple
    u_ref_k: np.ndarray  # (T, n_u)
    x_ref_k: np.ndarray  # (T, n_x), row k is the reference for x_{k+1}

    @property
    def T(self) -> int:
        return len(self.R_u_k)

    @property
    def n_u(self) -> int:
        return self.R_u_k[0].shape[1]

    @property
    def n_x(self) -> int:
        return self.R_x_k[0].shape[1]

    def validate(self) -> "MpcWeights":
        T = self.T
        if len(self.R_x_k) != T or T < 1:
            raise ValueError("weight lists must share the horizon length")
        n_u, n_x = self.n_u, self.n_x
        if any(r.ndim != 2 or r.shape[1] != n_u for r in self.R_u_k):
            raise ValueError("input weights must have n_u columns")
        if any(r.ndim != 2 or r.shape[1] != n_x for r in self.R_x_k):
            raise ValueError("state weights must have n_x columns")
        if self.u_ref_k.shape != (T, n_u) or self.x_ref_k.shape != (T, n_x):
            raise ValueError("reference shapes inconsistent with weights")
        return self

    @staticmethod
    def constant(R_u, R_x, T: int, u_ref=None, x_ref=None) -> "MpcWeights":
        R_u = np.asarray(R_u, dtype=float)
        R_x = np.asarray(R_x, dtype=float)
        n_u, n_x = R_u.shape[1], R_x.shape[1]
        return MpcWeights(
            R_u_k=tuple(R_u.copy() for _ in range(T)),
            R_x_k=tuple(R_x.copy() for _ in range(T)),
            u_ref_k=np.zeros((T, n_u)) if u_ref is None else np.asarray(u_ref, dtype=float),
            x_ref_k=np.zeros((T, n_x)) if x_ref is None else np.asarray(x_ref, dtype=float),
        ).validate()


@dataclass(frozen=True)
class CondensedForm:
    """Reduced problem over s with the affine recovery z = Z s + offset.

    For the qr_mpc method the full orthogonal factor and R1 ride along so the
    factorization can be reused (slack extension, diagnostics)."""

    method: str  # "standard" | "riccati" | "qr_mpc"
    transform_Z: np.ndarray
    transform_offset: np.ndarray
    A_r: np.ndarray
    b_r: np.ndarray
    G_r: np.ndarray
    g_r: np.ndarray
    flops: FlopCounter
    Q: np.ndarray | None = None
    R1: np.ndarray | None = None
    gains: tuple | None = None

    @property
    def n(self) -> int:
        return self.transform_Z.shape[1]

    def recover(self, s: np.ndarray) -> np.ndarray:
        return self.transform_Z @ s + self.transform_offset

    def to_reduced(self) -> ReducedPcls:
        return ReducedPcls(A_r=self.A_r, b_r=self.b_r, G_r=self.G_r, g_r=self.g_r)


# ---------------------------------------------------------------------------
# problem construction


def build_equality(model: LtvModel, x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Banded equality constraints C z = e embedding the dynamics.

    Block row 0 is [B_0 -I 0 ...], row k >= 1 is [... A_k B_k -I ...]; the
    first right-hand-side block is -A_0 x0, the sign the dynamics force on
    that row (B_0 u_0 - x_1 = -A_0 x_0).
    """
    T, n_x, n_u = model.T, model.n_x, model.n_u
    w = n_x + n_u
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n_x,):
        raise ValueError("x0 must have length n_x")
    C = np.zeros((T * n_x, model.ell))
    e = np.zeros(T * n_x)
    for k in range(T):
        rows = slice(k * n_x, (k + 1) * n_x)
        C[rows, k * w : k * w + n_u] = model.B_k[k]
        C[rows, k * w + n_u : (k + 1) * w] = -np.eye(n_x)
        if k > 0:
            C[rows, (k - 1) * w + n_u : k * w] = model.A_k[k]
    e[:n_x] = -(model.A_k[0] @ x0)
    return C, e


def build_cost(weights: MpcWeights) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal cost matrix and stacked reference vector.

    Blocks are interleaved to match the variable ordering:
    A = blockdiag(R_u_0, R_x_1, ..., R_u_{T-1}, R_x_T),
    b = [R_u_0 u_ref_0; R_x_1 x_ref_1; ...].
    """
    blocks = []
    parts = []
    for k in range(weights.T):
        blocks.append(weights.R_u_k[k])
        blocks.append(weights.R_x_k[k])
        parts.append(weights.R_u_k[k] @ weights.u_ref_k[k])
        parts.append(weights.R_x_k[k] @ weights.x_ref_k[k])
    return scipy.linalg.block_diag(*blocks), np.concatenate(parts)


def _cost_row_blocks(A: np.ndarray, T: int, n_x: int, n_u: int) -> list:
    """Recover the row partition of a block-diagonal cost matrix.

    Returns 2T (start, stop) pairs in the interleaved block order.  Rows with
    support spanning two column blocks, or out of order, are rejected; zero
    rows stay with the block currently open.
    """
    w = n_x + n_u
    col_block = np.empty(A.shape[1], dtype=int)
    for k in range(T):
        col_block[k * w : k * w + n_u] = 2 * k
        col_block[k * w + n_u : (k + 1) * w] = 2 * k + 1
    stops = np.zeros(2 * T, dtype=int)
    blk = 0
    for i in range(A.shape[0]):
        nz = np.nonzero(A[i])[0]
        if nz.size:
            b0, b1 = col_block[nz[0]], col_block[nz[-1]]
            if b0 != b1:
                raise ValueError("cost matrix is not block diagonal")
            if b1 < blk:
                raise ValueError("cost blocks out of order")
            blk = b1
        stops[blk:] = i + 1
    bounds = []
    start = 0
    for k in range(2 * T):
        bounds.append((start, int(stops[k]) if stops[k] > start else start))
        start = max(start, int(stops[k]))
    return bounds


# ---------------------------------------------------------------------------
# standard condensing


def _free_response(model: LtvModel, x0: np.ndarray, fl: FlopCounter, phase: str):
    n_x = model.n_x
    xs = np.zeros((model.T, n_x))
    x = np.asarray(x0, dtype=float)
    for k in range(model.T):
        x = model.A_k[k] @ x
        fl.add(phase, n_x * (2 * n_x - 1))
        xs[k] = x
    return xs  # row k holds x_{k+1} under zero input


def _input_response_blocks(model: LtvModel, fl: FlopCounter, phase: str):
    """blocks[k][i] maps u_i to x_{k+1}; time-invariant models share powers."""
    T, n_x, n_u = model.T, model.n_x, model.n_u
    blocks = [[None] * T for _ in range(T)]
    if model.is_lti:
        A, B = model.A_k[0], model.B_k[0]
        powers = [B]
        for _ in range(T - 1):
            powers.append(A @ powers[-1])
            fl.add(phase, _mm_flops(n_x, n_x, n_u))
        for k in range(T):
            for i in range(k + 1):
                blocks[k][i] = powers[k - i]
    else:
        for i in range(T):
            blk = model.B_k[i]
            blocks[i][i] = blk
            for k in range(i + 1, T):
                blk = model.A_k[k] @ blk
                fl.add(phase, _mm_flops(n_x, n_x, n_u))
                blocks[k][i] = blk
    return blocks


def _assemble_transform(model: LtvModel, xs, blocks, u_blocks=None, us=None):
    """Stack the coordinate transform z = F s + f from its stage blocks."""
    T, n_x, n_u, w = model.T, model.n_x, model.n_u, model.n_x + model.n_u
    F = np.zeros((model.ell, T * n_u))
    f = np.zeros(model.ell)
    for k in range(T):
        urows = slice(k * w, k * w + n_u)
        xrows = slice(k * w + n_u, (k + 1) * w)
        F[urows, k * n_u : (k + 1) * n_u] = np.eye(n_u)
        if u_blocks is not None:
            for i in range(k):
                F[urows, i * n_u : (i + 1) * n_u] = u_blocks[k][i]
        for i in range(k + 1):
            F[xrows, i * n_u : (i + 1) * n_u] = blocks[k][i]
        f[xrows] = xs[k]
        if us is not None:
            f[urows] = us[k]
    return F, f


def _apply_cost(A, b, T, n_x, n_u, blocks, xs, fl, u_blocks=None, us=None):
    """A_r = A F and b_r = b - A f for block-diagonal A, counted blockwise.

    Identity input blocks of F are placed, not multiplied.  With us=None the
    offset has zero input entries and the matching products are skipped.
    """
    bounds = _cost_row_blocks(A, T, n_x, n_u)
    w = n_x + n_u
    n = T * n_u
    A_r = np.zeros((A.shape[0], n))
    b_r = b.astype(float, copy=True)
    for k in range(T):
        u0, u1 = bounds[2 * k]
        x0_, x1 = bounds[2 * k + 1]
        Ru = A[u0:u1, k * w : k * w + n_u]
        Rx = A[x0_:x1, k * w + n_u : (k + 1) * w]
        A_r[u0:u1, k * n_u : (k + 1) * n_u] = Ru
        if u_blocks is not None:
            for i in range(k):
                A_r[u0:u1, i * n_u : (i + 1) * n_u] = Ru @ u_blocks[k][i]
                fl.add("cost_transform", _mm_flops(u1 - u0, n_u, n_u))
        for i in range(k + 1):
            A_r[x0_:x1, i * n_u : (i + 1) * n_u] = Rx @ blocks[k][i]
            fl.add("cost_transform", _mm_flops(x1 - x0_, n_x, n_u))
        b_r[x0_:x1] -= Rx @ xs[k]
        fl.add("cost_offset", (x1 - x0_) * (2 * n_x - 1))
        if us is not None:
            b_r[u0:u1] -= Ru @ us[k]
            fl.add("cost_offset", (u1 - u0) * (2 * n_u - 1))
    fl.add("cost_offset", b.shape[0])
    return A_r, b_r


def _apply_inequalities(G, g, F, f, fl):
    if G.shape[0] == 0:
        return np.zeros((0, F.shape[1])), np.zeros(0)
    n_i, ell = G.shape
    fl.add("inequalities", _mm_flops(n_i, ell, F.shape[1]) + n_i * (2 * ell - 1) + n_i)
    return G @ F, g - G @ f


def condense_standard(model: LtvModel, x0, A, b, G, g) -> CondensedForm:
    """Condense by replacing states with their forward prediction.

    The transform stacks the input-response blocks below identity selectors;
    the offset is the free response.  Numerically fragile for unstable
    dynamics, which is the point of the structured alternative.
    """
    fl = FlopCounter()
    xs = _free_response(model, x0, fl, "offset")
    blocks = _input_response_blocks(model, fl, "transform")
    F, f = _assemble_transform(model, xs, blocks)
    A_r, b_r = _apply_cost(A, b, model.T, model.n_x, model.n_u, blocks, xs, fl)
    G_r, g_r = _apply_inequalities(G, g, F, f, fl)
    return CondensedForm(
        method="standard",
        transform_Z=F,
        transform_offset=f,
        A_r=A_r,
        b_r=b_r,
        G_r=G_r,
        g_r=g_r,
        flops=fl,
    )


# ---------------------------------------------------------------------------
# Riccati-prestabilized condensing


def _solve_flops(n: int, rhs: int) -> int:
    return (2 * n**3) // 3 + 2 * n * n * rhs


def riccati_prestabilize(model: LtvModel, weights: MpcWeights, counter=None):
    """Backward LQ recursion; returns the gains and the closed-loop model.

    The recursion is implemented exactly as stated, including building K_k
    from P_k (the classical stationary form uses P_{k+1}); validation is by
    closed-loop spectral-radius reduction, not by matching external LQR
    conventions.  Stage-0 state weight reuses the first listed one: x_0 is
    data, so the cost carries no weight for it.
    """
    T, n_x, n_u = model.T, model.n_x, model.n_u
    fl = counter if counter is not None else FlopCounter()

    def qweight(k):
        R = weights.R_x_k[max(k - 1, 0)]
        fl.add("riccati", _mm_flops(n_x, R.shape[0], n_x))
        return R.T @ R

    P = qweight(T)
    gains = [None] * T
    A_cl = np.array(model.A_k, dtype=float, copy=True)
    for k in reversed(range(T)):
        Ak, Bk = model.A_k[k], model.B_k[k]
        Ru = weights.R_u_k[k]
        Rm = Ru.T @ Ru
        fl.add("riccati", _mm_flops(n_u, Ru.shape[0], n_u))
        BtP = Bk.T @ P
        AtP = Ak.T @ P
        fl.add("riccati", _mm_flops(n_u, n_x, n_x) + _mm_flops(n_x, n_x, n_x))
        M = Rm + BtP @ Bk
        fl.add("riccati", _mm_flops(n_u, n_x, n_u) + n_u * n_u)
        X = np.linalg.solve(M, BtP @ Ak)
        fl.add("riccati", _mm_flops(n_u, n_x, n_x) + _solve_flops(n_u, n_x))
        P = qweight(k) - (AtP @ Bk) @ X + AtP @ Ak
        fl.add(
            "riccati",
            _mm_flops(n_x, n_x, n_u)
            + _mm_flops(n_x, n_u, n_x)
            + _mm_flops(n_x, n_x, n_x)
            + 2 * n_x * n_x,
        )
        M2 = Rm + Bk.T @ P @ Bk
        gains[k] = -np.linalg.solve(M2, Bk.T @ P @ Ak)
        fl.add(
            "riccati",
            2 * _mm_flops(n_u, n_x, n_x)
            + _mm_flops(n_u, n_x, n_u)
            + _mm_flops(n_u, n_x, n_x)
            + n_u * n_u
            + _solve_flops(n_u, n_x),
        )
        A_cl[k] = Ak + Bk @ gains[k]
        fl.add("gain_application", _mm_flops(n_x, n_u, n_x) + n_x * n_x)
    closed = LtvModel(A_k=A_cl, B_k=np.array(model.B_k, dtype=float, copy=True))
    return tuple(gains), closed


def condense_riccati(model: LtvModel, x0, weights: MpcWeights, G, g) -> CondensedForm:
    """Condense through the prestabilizer u = K_k x_k + u^c.

    States follow the closed-loop prediction in the new inputs u^c; the input
    rows of the transform pick up K_k times the state response, so the
    original cost is applied to honest dense blocks.
    """
    fl = FlopCounter()
    n_x, n_u, T = model.n_x, model.n_u, model.T
    gains, closed = riccati_prestabilize(model, weights, counter=fl)
    A, b = build_cost(weights)
    xs = _free_response(closed, x0, fl, "offset")
    blocks = _input_response_blocks(closed, fl, "transform")
    u_blocks = [[None] * T for _ in range(T)]
    us = np.zeros((T, n_u))
    us[0] = gains[0] @ np.asarray(x0, dtype=float)
    fl.add("gain_application", n_u * (2 * n_x - 1))
    for k in range(1, T):
        us[k] = gains[k] @ xs[k - 1]
        fl.add("gain_application", n_u * (2 * n_x - 1))
        for i in range(k):
            u_blocks[k][i] = gains[k] @ blocks[k - 1][i]
            fl.add("gain_application", _mm_flops(n_u, n_x, n_u))
    F, f = _assemble_transform(closed, xs, blocks, u_blocks=u_blocks, us=us)
    A_r, b_r = _apply_cost(A, b, T, n_x, n_u, blocks, xs, fl, u_blocks=u_blocks, us=us)
    G_r, g_r = _apply_inequalities(G, g, F, f, fl)
    return CondensedForm(
        method="riccati",
        transform_Z=F,
        transform_offset=f,
        A_r=A_r,
        b_r=b_r,
        G_r=G_r,
        g_r=g_r,
        flops=fl,
        gains=gains,
    )


# ---------------------------------------------------------------------------
# structured QR


def _band_support(j0: int, T: int, n_x: int, n_u: int):
    """Allowed nonzero rows of column j0 of the transposed constraints:
    the contiguous input/state coupling blocks plus the lone unit entry."""
    w = n_x + n_u
    k, c = divmod(j0, n_x)
    start = 0 if k == 0 else (k - 1) * w + n_u
    stop = k * w + n_u
    return start, stop, stop + c


def qr_mpc(c_transpose: np.ndarray, n_x: int, n_u: int, T: int, eps0=None):
    """Structured QR of the transposed equality constraints.

    Annihilates the band below the diagonal with Givens rotations whose row
    and column spans follow the factor sparsity, so both updates touch only
    the entries that can be nonzero.  The input array is overwritten with R
    (and also returned); pass a copy to keep the original.  Entries at or
    below eps0 are not annihilated, and a near-zero pivot above a live entry
    degenerates the rotation into a signed swap, costing no flops.

    Returns (Q, R, flops) with Q ell x ell and R ell x T*n_x.
    """
    R = np.asarray(c_transpose)
    if R.dtype not in (np.float32, np.float64):
        R = R.astype(float)
    ell, n = T * (n_x + n_u), T * n_x
    if R.shape != (ell, n):
        raise ValueError(f"expected shape {(ell, n)}, got {R.shape}")
    for j0 in range(n):
        start, stop, diag = _band_support(j0, T, n_x, n_u)
        col = R[:, j0]
        if np.any(col[:start]) or np.any(col[stop:diag]) or np.any(col[diag + 1 :]):
            raise ValueError(f"nonzero outside the band in column {j0}")
    if eps0 is None:
        eps0 = 1e-14 * float(np.max(np.abs(R))) if R.size else 0.0
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    w = n_x + n_u
    qmat = np.eye(ell, dtype=R.dtype)
    flops_r = 0
    flops_q = 0
    for j0 in range(n):
        k = j0 // n_x
        r1 = j0 + n_u * (k + 1)
        r2 = n_x * min(k + 2, T)
        span_r = 6 * (r2 - j0)
        for i in range(r1, j0, -1):
            b = R[i, j0]
            if abs(b) <= eps0:
                continue
            q1 = w * ((i - j0 - 1) // n_u)
            a = R[i - 1, j0]
            if abs(a) < eps0:
                # degenerate rotation: signed swap, no arithmetic
                sgn = 1.0 if b > 0 else -1.0
                R[i - 1, j0:r2], R[i, j0:r2] = (
                    sgn * R[i, j0:r2],
                    -sgn * R[i - 1, j0:r2],
                )
                qmat[q1 : r1 + 1, i - 1], qmat[q1 : r1 + 1, i] = (
                    sgn * qmat[q1 : r1 + 1, i],
                    -sgn * qmat[q1 : r1 + 1, i - 1],
                )
                continue
            c, s, _ = linalg.givens(float(a), float(b))
            top, bot = R[i - 1, j0:r2], R[i, j0:r2]
            R[i - 1, j0:r2], R[i, j0:r2] = c * top - s * bot, s * top + c * bot
            R[i, j0] = 0.0
            qt, qb = qmat[q1 : r1 + 1, i - 1], qmat[q1 : r1 + 1, i]
            qmat[q1 : r1 + 1, i - 1], qmat[q1 : r1 + 1, i] = (
                c * qt - s * qb,
                s * qt + c * qb,
            )
            flops_r += span_r
            flops_q += 6 * (r1 - q1 + 1)
    fl = FlopCounter()
    fl.add("rotate_R", flops_r)
    fl.add("rotate_Q", flops_q)
    return qmat, R, fl


def dense_givens_qr(m: np.ndarray):
    """Plain full-Q Givens QR, the unstructured baseline the counters are
    measured against: every rotation sweeps the full trailing columns of R
    and all rows of Q."""
    R = np.array(m, dtype=float, copy=True)
    rows, cols = R.shape
    qmat = np.eye(rows)
    flops_r = 0
    flops_q = 0
    for j0 in range(cols):
        for i in range(rows - 1, j0, -1):
            flops_r += 6 * (cols - j0)
            flops_q += 6 * rows
            b = R[i, j0]
            if b == 0.0:
                continue
            c, s, _ = linalg.givens(float(R[i - 1, j0]), float(b))
            top, bot = R[i - 1, j0:], R[i, j0:]
            R[i - 1, j0:], R[i, j0:] = c * top - s * bot, s * top + c * bot
            R[i, j0] = 0.0
            qt, qb = qmat[:, i - 1], qmat[:, i]
            qmat[:, i - 1], qmat[:, i] = c * qt - s * qb, s * qt + c * qb
    fl = FlopCounter()
    fl.add("rotate_R", flops_r)
    fl.add("rotate_Q", flops_q)
    return qmat, R, fl


def condense_qr(model: LtvModel, x0, A, b, G, g) -> CondensedForm:
    """Condense through the structured QR of the transposed constraints.

    The minimum-norm particular solution comes from a banded forward
    substitution and a support-limited product with the Q1 columns; the
    reduced cost exploits the zero leading blocks and the triangular input
    blocks of the Q2 columns.
    """
    T, n_x, n_u, w = model.T, model.n_x, model.n_u, model.n_x + model.n_u
    ell, n_e = model.ell, T * model.n_x
    C, e = build_equality(model, x0)
    qmat, R, fl = qr_mpc(C.T.copy(), n_x, n_u, T)
    R1 = R[:n_e]

    # banded forward substitution for R1' s_bar = e: row i only reaches back
    # to the previous stage block
    s_bar = np.zeros(n_e)
    for i0 in range(n_e):
        k0 = max(0, n_x * (i0 // n_x - 1))
        diag = R1[i0, i0]
        if diag == 0.0:
            raise RankDeficientError(i0, n_e)
        s_bar[i0] = (e[i0] - R1[k0:i0, i0] @ s_bar[k0:i0]) / diag
        fl.add("substitution", 2 * (i0 - k0) + 2)

    # z_bar = Q1 s_bar, one support-limited axpy per column
    z_bar = np.zeros(ell)
    for j0 in range(n_e):
        top = j0 + n_u * (j0 // n_x + 1) + 1
        z_bar[:top] += qmat[:top, j0] * s_bar[j0]
        fl.add("offset", 2 * top)

    bounds = _cost_row_blocks(A, T, n_x, n_u)
    n = T * n_u
    A_r = np.zeros((A.shape[0], n))
    b_r = b.astype(float, copy=True)

    # b_r = b - A z_bar blockwise on the diagonal cost blocks
    for k in range(T):
        u0, u1 = bounds[2 * k]
        x0_, x1 = bounds[2 * k + 1]
        Ru = A[u0:u1, k * w : k * w + n_u]
        Rx = A[x0_:x1, k * w + n_u : (k + 1) * w]
        b_r[u0:u1] -= Ru @ z_bar[k * w : k * w + n_u]
        b_r[x0_:x1] -= Rx @ z_bar[k * w + n_u : (k + 1) * w]
        fl.add("cost_offset", 2 * (u1 - u0) * n_u + 2 * (x1 - x0_) * n_x)
    fl.add("cost_offset", b.shape[0])

    # A_r = A Q2 column by column: stage st owns a lower-triangular input
    # block, everything above it is zero, everything below is dense
    for j in range(n):
        st, c = divmod(j, n_u)
        q = qmat[:, n_e + j]
        u0, u1 = bounds[2 * st]
        x0_, x1 = bounds[2 * st + 1]
        Ru = A[u0:u1, st * w : st * w + n_u]
        Rx = A[x0_:x1, st * w + n_u : (st + 1) * w]
        A_r[u0:u1, j] = Ru[:, c:] @ q[st * w + c : st * w + n_u]
        A_r[x0_:x1, j] = Rx @ q[st * w + n_u : (st + 1) * w]
        fl.add("products", 2 * (u1 - u0) * (n_u - c) + 2 * (x1 - x0_) * n_x)
        for st2 in range(st + 1, T):
            v0, v1 = bounds[2 * st2]
            y0, y1 = bounds[2 * st2 + 1]
            Ru2 = A[v0:v1, st2 * w : st2 * w + n_u]
            Rx2 = A[y0:y1, st2 * w + n_u : (st2 + 1) * w]
            A_r[v0:v1, j] = Ru2 @ q[st2 * w : st2 * w + n_u]
            A_r[y0:y1, j] = Rx2 @ q[st2 * w + n_u : (st2 + 1) * w]
            fl.add("products", 2 * (v1 - v0) * n_u + 2 * (y1 - y0) * n_x)

    Q2 = qmat[:, n_e:]
    G_r, g_r = _apply_inequalities(G, g, Q2, z_bar, fl)
    return CondensedForm(
        method="qr_mpc",
        transform_Z=Q2,
        transform_offset=z_bar,
        A_r=A_r,
        b_r=b_r,
        G_r=G_r,
        g_r=g_r,
        flops=fl,
        Q=qmat,
        R1=R1,
    )


# ---------------------------------------------------------------------------
# closed-form flop predictions


def flops_closed_form(method: str, T: int, n_x: int, n_u: int) -> float:
    """Leading-order flop predictions for the counted routines.

    The structured-condensing total composes the factorization cost with the
    per-step terms: banded substitution, the support product with Q1, the
    reduced right-hand side, and the sparsity-exploiting product with the Q2
    columns.  The stated remainders (linear for the structured forms,
    quadratic for the dense baseline) are dropped.
    """
    if min(T, n_x, n_u) < 1:
        raise ValueError("T, n_x, n_u must be at least 1")
    ell = T * (n_x + n_u)
    if method == "qr_mpc":
        return float(
            T**3 * (n_x**2 * n_u + n_x * n_u**2)
            + 3 * T**2 * n_u * n_x * (2 * n_x + n_u + 1)
        )
    if method == "qr_dense":
        return float(
            T**3 * (5 * n_x**3 + 6 * n_x * n_u**2 + 12 * n_x**2 * n_u)
            - 6 * T**2 * (n_x**2 + n_u * n_x)
        )
    if method == "qr_savings":
        return float(T**3 * (5 * n_x**3 + 11 * n_x**2 * n_u + 5 * n_x * n_u**2))
    if method == "condense_standard":
        return float(T**2 * (n_x**2 * n_u - n_x * n_u / 2))
    if method == "condense_qr":
        chi_1 = n_x**2 * (3 * T - 2) + T * n_x
        chi_2 = n_x**2 * (T**2 + 2 * T - 1) + n_x * (n_u * (T**2 - 1) - 2 * T)
        chi_3 = 2 * (n_u**2 + n_x**2) * T + ell
        chi_4 = T**2 * (n_u**3 + n_x**2 * n_u) + T * (n_u**2 + n_x**2 * n_u)
        return flops_closed_form("qr_mpc", T, n_x, n_u) + chi_1 + chi_2 + chi_3 + chi_4
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# slack extension and move blocking


def extend_slack(cond: CondensedForm, soft: SoftenedPcls | None) -> CondensedForm:
    """Extend a condensed form with slack variables as free coordinates.

    The equality factorization is reused through the block-diagonal
    extension: slacks never enter the equalities, so no refactorization
    happens and the flop counter is carried over unchanged.
    """
    if soft is None or soft.n_slack == 0:
        return cond
    nz = soft.n_slack
    if soft.V_g.shape[0] != cond.G_r.shape[0]:
        raise ValueError("softened rows inconsistent with the condensed form")
    dtype = cond.A_r.dtype
    Z_ext = scipy.linalg.block_diag(cond.transform_Z, np.eye(nz, dtype=dtype))
    A_ext = scipy.linalg.block_diag(cond.A_r, soft.Lambda_zeta)
    Q_ext = None
    if cond.Q is not None:
        Q_ext = scipy.linalg.block_diag(cond.Q, np.eye(nz, dtype=cond.Q.dtype))
    return CondensedForm(
        method=cond.method,
        transform_Z=Z_ext,
        transform_offset=np.concatenate([cond.transform_offset, np.zeros(nz)]),
        A_r=A_ext,
        b_r=np.concatenate([cond.b_r, np.zeros(nz, dtype=dtype)]),
        G_r=np.hstack([cond.G_r, -soft.V_g]),
        g_r=cond.g_r,
        flops=FlopCounter(breakdown=dict(cond.flops.breakdown)),
        Q=Q_ext,
        R1=cond.R1,
        gains=cond.gains,
    )


def move_blocking_basis(T: int, n_u: int, breakpoints) -> Basis:
    """Orthonormal unit-step input basis: inputs are held constant on each
    breakpoint interval.  breakpoints must run 0 = k_0 < ... < k_{m_u} = T."""
    ks = [int(k) for k in breakpoints]
    if len(ks) < 2 or ks[0] != 0 or ks[-1] != T or any(
        a >= b for a, b in zip(ks, ks[1:])
    ):
        raise ValueError("breakpoints must be strictly increasing from 0 to T")
    m_u = len(ks) - 1
    Phi = np.zeros((T * n_u, m_u * n_u))
    for i in range(m_u):
        height = 1.0 / np.sqrt(ks[i + 1] - ks[i])
        for c in range(n_u):
            for k in range(ks[i], ks[i + 1]):
                Phi[k * n_u + c, i * n_u + c] = height
    return Basis(phi0=np.zeros(T * n_u), Phi=Phi).validate()


# ---------------------------------------------------------------------------
# fixtures


def save_fixture(path, model: LtvModel, weights: MpcWeights, x0) -> None:
    doc = {
        "T": model.T,
        "n_x": model.n_x,
        "n_u": model.n_u,
        "A_k": [a.tolist() for a in model.A_k],
        "B_k": [b.tolist() for b in model.B_k],
        "weights": {
            "R_u": [r.tolist() for r in weights.R_u_k],
            "R_x": [r.tolist() for r in weights.R_x_k],
            "u_ref": weights.u_ref_k.tolist(),
            "x_ref": weights.x_ref_k.tolist(),
        },
        "x0": np.asarray(x0, dtype=float).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_fixture(path):
    with open(path) as fh:
        doc = json.load(fh)
    model = LtvModel.from_blocks(doc["A_k"], doc["B_k"])
    if (model.T, model.n_x, model.n_u) != (doc["T"], doc["n_x"], doc["n_u"]):
        raise ValueError("fixture dimensions inconsistent with its matrices")
    wd = doc["weights"]
    weights = MpcWeights(
        R_u_k=tuple(np.asarray(r, dtype=float) for r in wd["R_u"]),
        R_x_k=tuple(np.asarray(r, dtype=float) for r in wd["R_x"]),
        u_ref_k=np.asarray(wd["u_ref"], dtype=float),
        x_ref_k=np.asarray(wd["x_ref"], dtype=float),
    ).validate()
    x0 = np.asarray(doc["x0"], dtype=float)
    return model, weights, x0
