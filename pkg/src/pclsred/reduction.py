"""Reduced bases from optimizer samples: single SVD, K-means, K-SVD.

Samples are optimizers s_i* of the reduced problem collected over parameter
draws. A basis (phi0, Phi) approximates them as s ~ phi0 + Phi v. K-SVD
clusters the samples so each cluster gets its own basis, reassigning samples
to the cluster whose subspace represents them best; with the sign-fixed SVD
and lowest-index tie-breaking the whole procedure is deterministic, and each
sweep cannot increase the objective, so termination is finite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .pcls import Basis


class IterationCapError(RuntimeError):
    """Clustering failed to converge within the iteration cap."""


@dataclass(frozen=True)
class SampleSet:
    thetas: np.ndarray  # M x p
    s_stars: np.ndarray  # M x n
    lambdas_max: np.ndarray  # M

    @property
    def M(self) -> int:
        return self.s_stars.shape[0]

    @property
    def n(self) -> int:
        return self.s_stars.shape[1]

    def validate(self, eps_lambda: float = 0.0) -> "SampleSet":
        if self.M == 0:
            raise ValueError("empty sample set")
        if not (self.thetas.shape[0] == self.lambdas_max.shape[0] == self.M):
            raise ValueError("sample set field lengths differ")
        if eps_lambda > 0 and np.any(self.lambdas_max < eps_lambda):
            raise ValueError("sample with all multipliers below the collection threshold")
        return self


@dataclass
class ClusterModel:
    K: int
    assignments: np.ndarray  # M labels in {0..K-1}
    bases: list[Basis]
    costs_trace: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def m_per_cluster(self) -> list[int]:
        return [b.m for b in self.bases]

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "n": int(self.bases[0].n),
                "K": self.K,
                "m_per_cluster": self.m_per_cluster,
                "assignments": self.assignments.tolist(),
                "phi0": [b.phi0.tolist() for b in self.bases],
                "Phi": [b.Phi.flatten(order="F").tolist() for b in self.bases],
            }
        )

    @staticmethod
    def from_json(text: str, dtype=np.float64) -> "ClusterModel":
        d = json.loads(text)
        if d.get("version") != 1:
            raise ValueError(f"unsupported cluster model version {d.get('version')!r}")
        n = d["n"]
        bases = [
            Basis(
                phi0=np.asarray(p0, dtype=dtype),
                Phi=np.asarray(phi, dtype=dtype).reshape((n, m), order="F"),
            )
            for p0, phi, m in zip(d["phi0"], d["Phi"], d["m_per_cluster"])
        ]
        return ClusterModel(
            K=d["K"], assignments=np.asarray(d["assignments"], dtype=int), bases=bases
        )


def _cluster_basis(rows: np.ndarray, m: int) -> tuple[Basis, float]:
    """Mean-centered truncated-SVD basis of the given sample rows.

    Returns the basis and the trailing cost sum_{h>m} sigma_h^2. When the
    centered matrix has fewer right singular vectors than m (small clusters,
    zero spread), the basis is completed with deterministic orthonormal
    directions; an all-zero spread falls back to leading canonical axes.
    """
    if rows.shape[0] == 0:
        raise ValueError("cluster must hold at least one sample")
    n = rows.shape[1]
    phi0 = rows.mean(axis=0)
    centered = rows - phi0
    if not np.any(centered):
        return Basis(phi0=phi0, Phi=np.eye(n, dtype=rows.dtype)[:, :m]), 0.0
    _, sig, vt = linalg.svd_econ(centered)
    avail = vt.shape[0]
    if m <= avail:
        phi = vt[:m].T
    else:
        # complete the orthonormal set; qr of an orthonormal block keeps it
        q, _ = linalg.qr_full(vt.T)
        phi = q[:, :m]
    tail = sig[m:] if m < avail else sig[:0]
    return Basis(phi0=phi0, Phi=np.ascontiguousarray(phi)), float(np.sum(tail**2))


def svd_basis(samples: SampleSet, m: int) -> Basis:
    """Single basis from the SVD of the centered sample matrix."""
    if not 1 <= m <= samples.n:
        raise ValueError(f"need 1 <= m <= {samples.n}")
    if samples.M < 2:
        raise ValueError("need at least two samples")
    basis, _ = _cluster_basis(samples.s_stars, m)
    return basis


def reassign_distance(s: np.ndarray, basis: Basis) -> float:
    """min_v ||s - Phi v - phi0||^2, closed-form via orthonormality."""
    r = s - basis.phi0
    r = r - basis.Phi @ (basis.Phi.T @ r)
    return float(r @ r)


def _initial_partition(M: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Random partition with every cluster nonempty (requires M >= K)."""
    labels = np.empty(M, dtype=int)
    perm = rng.permutation(M)
    for j, chunk in enumerate(np.array_split(perm, K)):
        labels[chunk] = j
    return labels


def _repair_empty(labels: np.ndarray, residuals: np.ndarray, K: int) -> np.ndarray:
    # reseed each empty cluster with the worst-represented sample from a
    # cluster holding at least two, so no donor empties out in turn; with
    # M >= K some such donor always exists
    for j in range(K):
        if not np.any(labels == j):
            counts = np.bincount(labels, minlength=K)
            cand = np.where(counts[labels] >= 2)[0]
            worst = int(cand[np.argmax(residuals[cand])])
            labels[worst] = j
            residuals[worst] = -1.0
    return labels


def kmeans(
    samples: SampleSet, K: int, m: int, seed: int = 0, max_iter: int = 1000
) -> ClusterModel:
    """Classical K-means on the optimizer vectors, then per-cluster SVD bases."""
    if not (1 <= K <= samples.M):
        raise ValueError("need 1 <= K <= M")
    if not 0 <= m <= samples.n:
        raise ValueError(f"basis dimension must lie in [0, {samples.n}]")
    s = samples.s_stars
    labels = _initial_partition(samples.M, K, np.random.default_rng(seed))
    costs = []
    for it in range(max_iter):
        means = np.stack([s[labels == j].mean(axis=0) for j in range(K)])
        d2 = ((s[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        costs.append(float(d2[np.arange(samples.M), labels].sum()))
        new_labels = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        new_labels = _repair_empty(
            new_labels, d2[np.arange(samples.M), new_labels].copy(), K
        )
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    else:
        raise IterationCapError(f"kmeans did not converge in {max_iter} iterations")
    bases = [_cluster_basis(s[labels == j], m)[0] for j in range(K)]
    return ClusterModel(K=K, assignments=labels, bases=bases, costs_trace=costs, n_iter=it + 1)


def ksvd(
    samples: SampleSet,
    m_per_cluster: list[int] | np.ndarray,
    init: np.ndarray | None = None,
    seed: int = 0,
    max_iter: int = 1000,
) -> ClusterModel:
    """Cluster samples by best-approximating subspace (per-cluster SVD bases).

    Each sweep recomputes every cluster's mean and basis, then reassigns each
    sample to the cluster of smallest projection residual. Stops when the
    label vector no longer changes. init defaults to a converged K-means
    partition.
    """
    m_per_cluster = [int(m) for m in m_per_cluster]
    K = len(m_per_cluster)
    if any(not 0 <= m <= samples.n for m in m_per_cluster):
        raise ValueError(f"cluster dimensions must lie in [0, {samples.n}]")
    if samples.M < K:
        raise ValueError("need M >= K")
    s = samples.s_stars
    if init is None:
        labels = kmeans(samples, K, max(m_per_cluster), seed=seed).assignments.copy()
    else:
        labels = np.asarray(init, dtype=int).copy()
        if labels.shape != (samples.M,) or set(np.unique(labels)) - set(range(K)):
            raise ValueError("init must label every sample with a cluster in range")
        if len(np.unique(labels)) < K:
            raise ValueError("init must leave no cluster empty")
    floor = (1e-10 * max(1.0, float(np.max(np.abs(s))))) ** 2
    costs = []
    for it in range(max_iter):
        pairs = [_cluster_basis(s[labels == j], m_per_cluster[j]) for j in range(K)]
        bases = [p[0] for p in pairs]
        costs.append(float(sum(p[1] for p in pairs)))
        d2 = np.stack(
            [[reassign_distance(x, b) for b in bases] for x in s]
        )
        # residuals at rounding level are exact ties; snapping them to zero
        # makes the lowest-index rule apply instead of letting noise oscillate
        d2[d2 <= floor] = 0.0
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(
            new_labels, d2[np.arange(samples.M), new_labels].copy(), K
        )
        if np.array_equal(new_labels, labels):
            return ClusterModel(
                K=K, assignments=labels, bases=bases, costs_trace=costs, n_iter=it + 1
            )
        labels = new_labels
    raise IterationCapError(f"ksvd did not converge in {max_iter} iterations")


def ksvd_cost(model: ClusterModel, samples: SampleSet) -> float:
    """Direct evaluation of the clustering objective at the model."""
    return float(
        sum(
            reassign_distance(x, model.bases[j])
            for x, j in zip(samples.s_stars, model.assignments)
        )
    )
