"""Shared oracles for the structured-factorization tests.

The mask builders and flop double sums below are written directly from the
block structure of the stage-interleaved equality matrix (1-based index
arithmetic, translated verbatim), independently of the loop bounds used by
the implementation, so that counter and sparsity tests have a second route.
"""

from fractions import Fraction

import numpy as np

from pclsred.mpc import LtvModel, MpcWeights


def r_mask(T, n_x, n_u):
    """Allowed-nonzero pattern of the full T(n_x+n_u) x Tn_x triangular factor.

    Block-bidiagonal: diagonal n_x x n_x blocks upper triangular, the block
    right above dense, everything else (including all rows >= Tn_x) zero.
    """
    ell = T * (n_x + n_u)
    mask = np.zeros((ell, T * n_x), dtype=bool)
    for j in range(T * n_x):
        k, c = divmod(j, n_x)
        mask[k * n_x : k * n_x + c + 1, j] = True
        if k >= 1:
            mask[(k - 1) * n_x : k * n_x, j] = True
    return mask


def q1_mask(T, n_x, n_u):
    """Range-part pattern: column j reaches down to row j + n_u*(k+1), k = j // n_x."""
    ell = T * (n_x + n_u)
    mask = np.zeros((ell, T * n_x), dtype=bool)
    for j in range(T * n_x):
        k = j // n_x
        mask[: j + n_u * (k + 1) + 1, j] = True
    return mask


def q2_mask(T, n_x, n_u):
    """Null-space pattern: column j starts at row st*(n_x+n_u) + c, j = st*n_u + c."""
    w = n_x + n_u
    mask = np.zeros((T * w, T * n_u), dtype=bool)
    for j in range(T * n_u):
        st, c = divmod(j, n_u)
        mask[st * w + c :, j] = True
    return mask


def chi_r_sum(T, n_x, n_u):
    """Exact rotation flops applied to the triangular factor, 1-based double sum."""
    total = 0
    for j in range(1, T * n_x + 1):
        k = (j - 1) // n_x
        r1 = j + n_u * (k + 1)
        r2 = n_x * min(k + 2, T)
        total += (r1 - j) * 6 * (r2 - j + 1)
    return total


def chi_q_sum(T, n_x, n_u):
    """Exact rotation flops applied to the orthogonal factor, 1-based double sum."""
    w = n_x + n_u
    total = 0
    for j in range(1, T * n_x + 1):
        k = (j - 1) // n_x
        r1 = j + n_u * (k + 1)
        for i in range(j + 1, r1 + 1):
            total += 6 * (j + n_u * (1 + k) - w * ((i - j - 1) // n_u))
    return total


def chi_dense_sum(m, n):
    """Unstructured Givens QR flops on an m x n matrix, one rotation per subdiagonal entry."""
    total = 0
    for j in range(1, n + 1):
        total += max(0, m - j) * 6 * (m + n - j + 1)
    return total


def lagrange_extrapolate(points, t):
    """Exact polynomial through the given (t_i, value_i) points, evaluated at t."""
    total = Fraction(0)
    for i, (ti, vi) in enumerate(points):
        term = Fraction(vi)
        for jj, (tj, _) in enumerate(points):
            if jj != i:
                term = term * Fraction(t - tj, ti - tj)
        total += term
    return total


def random_ltv(rng, T, n_x, n_u, scale=1.0):
    a_blocks = scale * rng.standard_normal((T, n_x, n_x))
    b_blocks = scale * rng.standard_normal((T, n_x, n_u))
    return LtvModel(A_k=a_blocks, B_k=b_blocks)


def random_lti(rng, T, n_x, n_u, eig_lo=0.5, eig_hi=0.95):
    """LTI model with real eigenvalues placed in [eig_lo, eig_hi] via an orthogonal similarity."""
    eigs = rng.uniform(eig_lo, eig_hi, size=n_x)
    q_rot, _ = np.linalg.qr(rng.standard_normal((n_x, n_x)))
    a = q_rot @ np.diag(eigs) @ q_rot.T
    b = rng.standard_normal((n_x, n_u))
    return LtvModel.lti(a, b, T)


def random_weights(rng, T, n_x, n_u, with_refs=False):
    r_u = tuple(np.diag(rng.uniform(0.5, 2.0, size=n_u)) for _ in range(T))
    r_x = tuple(np.diag(rng.uniform(0.5, 2.0, size=n_x)) for _ in range(T))
    u_ref = rng.standard_normal((T, n_u)) if with_refs else np.zeros((T, n_u))
    x_ref = rng.standard_normal((T, n_x)) if with_refs else np.zeros((T, n_x))
    return MpcWeights(R_u_k=r_u, R_x_k=r_x, u_ref_k=u_ref, x_ref_k=x_ref)
