"""Dense linear-algebra kernels shared by the reduction pipeline.

Conventions used throughout the package:

  * QR factors are normalized so that diag(R) >= 0 (signs folded into Q).
  * Singular vectors carry a deterministic sign: the largest-magnitude
    component of each right singular vector is made positive.
  * Condition numbers are generalized (Moore-Penrose): sigma_max over the
    smallest singular value above the rank tolerance.

All kernels preserve the input dtype, so float32 problems are factorized in
float32.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg


def givens(a: float, b: float) -> tuple[float, float, float]:
    """Plane rotation (c, s, r) with c*a - s*b = r >= 0 and s*a + c*b = 0.

    Inputs are shifted by a power of two into a well-scaled domain before
    combining, so c and s keep full precision even for subnormal or huge
    pairs; only the returned r rounds at the original scale.

    >>> givens(3.0, 4.0)
    (0.6, -0.8, 5.0)
    """
    if b == 0.0:
        if a == 0.0:
            raise ValueError("givens undefined for a = b = 0")
        return (1.0, 0.0, a) if a > 0 else (-1.0, 0.0, -a)
    if a == 0.0:
        return (0.0, -1.0, b) if b > 0 else (0.0, 1.0, -b)
    k = math.frexp(max(abs(a), abs(b)))[1]
    a_s, b_s = math.ldexp(a, -k), math.ldexp(b, -k)
    r_s = math.hypot(a_s, b_s)
    return a_s / r_s, -b_s / r_s, math.ldexp(r_s, k)


def _fix_qr_signs(q: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Flip rows of R (and matching columns of Q) so diag(R) >= 0.
    k = min(r.shape)
    flip = np.sign(np.diag(r)[:k])
    flip[flip == 0] = 1.0
    r[:k] *= flip[:, None]
    q[:, :k] *= flip[None, :]
    return q, r


def qr_full(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full QR: Q is square orthogonal, R has the shape of m, diag(R) >= 0."""
    q, r = np.linalg.qr(m, mode="complete")
    return _fix_qr_signs(q, r)


def qr_econ(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Economy QR of a tall matrix, diag(R) >= 0."""
    q, r = np.linalg.qr(m, mode="reduced")
    return _fix_qr_signs(q, r)


def default_rank_eps(m: np.ndarray) -> float:
    """Frobenius-scaled rank tolerance: ||m||_F * eps(dtype) * max(shape)."""
    return float(
        np.linalg.norm(m) * np.finfo(m.dtype).eps * max(m.shape)
    )


def qr_rank_revealing(
    m: np.ndarray, eps: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Column-pivoted QR: m[:, perm] = Q R, with the numerical rank.

    The rank is the smallest n3 with ||R[n3:, n3:]||_F <= eps, i.e. the
    largest leading block whose trailing remainder is negligible.
    """
    if eps is None:
        eps = default_rank_eps(m)
    q, r, perm = scipy.linalg.qr(m, mode="full", pivoting=True)
    q, r = _fix_qr_signs(q, r)
    kmax = min(m.shape)
    # Trailing Frobenius norms: R is upper triangular, so the (k, k) trailing
    # block norm only needs the row tails.
    row_tail = np.array([np.dot(r[i, i:], r[i, i:]) for i in range(kmax)])
    rank = kmax
    acc = 0.0
    for k in range(kmax - 1, -1, -1):
        acc += row_tail[k]
        if np.sqrt(acc) <= eps:
            rank = k
    return q, r, perm, rank


def svd_econ(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD with the deterministic sign convention.

    Signs are fixed from the right singular vectors: the entry of largest
    magnitude in each row of Vt is made positive (ties broken at the lowest
    index), and U columns are flipped to match.
    """
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    for i in range(vt.shape[0]):
        j = int(np.argmax(np.abs(vt[i])))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
            u[:, i] = -u[:, i]
    return u, s, vt


def _check_diag(t: np.ndarray) -> None:
    if np.any(np.diag(t) == 0):
        raise np.linalg.LinAlgError("triangular solve with zero diagonal entry")


def solve_triu(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Back substitution with upper-triangular r."""
    _check_diag(r)
    return scipy.linalg.solve_triangular(r, b, lower=False)


def solve_tril(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution with lower-triangular l."""
    _check_diag(l)
    return scipy.linalg.solve_triangular(l, b, lower=True)


def cond(m: np.ndarray) -> float:
    """Generalized condition number sigma_max / sigma_min^+.

    sigma_min^+ is the smallest singular value above the Moore-Penrose cutoff
    max(shape) * eps * sigma_max.
    """
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("cond undefined for a zero matrix")
    tol = max(m.shape) * np.finfo(m.dtype).eps * s[0]
    s_pos = s[s > tol]
    return float(s[0] / s_pos[-1])


def save_matrix_text(path, m: np.ndarray) -> None:
    """Write a matrix fixture: a 'rows cols' line, then row-major values.

    Values carry 17 significant digits so float64 round-trips exactly.
    """
    m = np.atleast_2d(np.asarray(m))
    with open(path, "w") as f:
        f.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_matrix_text(path, dtype=np.float64) -> np.ndarray:
    with open(path) as f:
        rows, cols = (int(t) for t in f.readline().split())
        data = [float(t) for t in f.read().split()]
    if len(data) != rows * cols:
        raise ValueError(
            f"matrix fixture {path}: expected {rows * cols} values, got {len(data)}"
        )
    return np.array(data, dtype=dtype).reshape(rows, cols)
