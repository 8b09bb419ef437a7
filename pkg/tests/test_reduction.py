"""Tests for sample-based basis reduction: SVD, K-means, K-SVD."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pclsred.pcls import Basis
from pclsred.reduction import (
    ClusterModel,
    IterationCapError,
    SampleSet,
    kmeans,
    ksvd,
    ksvd_cost,
    reassign_distance,
    svd_basis,
)


def make_samples(s_stars: np.ndarray) -> SampleSet:
    M = s_stars.shape[0]
    return SampleSet(
        thetas=np.zeros((M, 2)),
        s_stars=np.asarray(s_stars, dtype=float),
        lambdas_max=np.ones(M),
    )


def random_samples(rng, M, n) -> SampleSet:
    return make_samples(rng.standard_normal((M, n)))


def as_partition(labels) -> frozenset:
    labels = np.asarray(labels)
    return frozenset(
        frozenset(np.flatnonzero(labels == j).tolist()) for j in np.unique(labels)
    )


def two_partitions(M):
    """All partitions of {0..M-1} into two nonempty clusters (sample 0 pinned)."""
    for mask in range(1, 2 ** (M - 1)):
        labels = np.zeros(M, dtype=int)
        for i in range(1, M):
            labels[i] = (mask >> (i - 1)) & 1
        yield labels


def partition_cost(s, labels, m):
    """Optimal clustering objective of a fixed partition, via trailing
    singular values of each mean-centered cluster block."""
    total = 0.0
    for j in np.unique(labels):
        rows = s[labels == j]
        centered = rows - rows.mean(axis=0)
        sig = np.linalg.svd(centered, compute_uv=False)
        total += float(np.sum(sig[m:] ** 2))
    return total


class TestSvdBasis:
    def test_identical_samples(self):
        s = np.tile([1.0, 2.0, 3.0], (4, 1))
        basis = svd_basis(make_samples(s), m=2)
        assert np.array_equal(basis.phi0, [1.0, 2.0, 3.0])
        # zero spread: convention is the leading canonical directions
        assert np.array_equal(basis.Phi, np.eye(3)[:, :2])

    def test_line_samples_reconstructed_by_one_direction(self):
        rng = np.random.default_rng(3)
        offset = rng.standard_normal(5)
        d = rng.standard_normal(5)
        s = offset + np.linspace(-2.0, 3.0, 7)[:, None] * d
        basis = svd_basis(make_samples(s), m=1)
        recon = basis.phi0 + (s - basis.phi0) @ basis.Phi @ basis.Phi.T
        assert np.max(np.abs(recon - s)) <= 1e-10

    def test_full_dimension_is_lossless(self):
        rng = np.random.default_rng(4)
        s = rng.standard_normal((15, 6))
        basis = svd_basis(make_samples(s), m=6)
        recon = basis.phi0 + (s - basis.phi0) @ basis.Phi @ basis.Phi.T
        assert np.linalg.norm(recon - s) <= 1e-10 * np.linalg.norm(s)

    def test_rejects_m_above_dimension(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            svd_basis(random_samples(rng, 6, 4), m=5)

    def test_rejects_single_sample(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            svd_basis(random_samples(rng, 1, 4), m=1)


class TestKmeans:
    def test_single_cluster_matches_svd_basis(self):
        rng = np.random.default_rng(7)
        samples = random_samples(rng, 12, 5)
        model = kmeans(samples, K=1, m=2, seed=0)
        ref = svd_basis(samples, m=2)
        assert np.array_equal(model.bases[0].phi0, ref.phi0)
        assert np.array_equal(model.bases[0].Phi, ref.Phi)
        assert np.all(model.assignments == 0)

    def test_separated_clouds_recovered(self):
        rng = np.random.default_rng(8)
        a = 0.1 * rng.standard_normal((4, 3)) + np.array([10.0, 0.0, 0.0])
        b = 0.1 * rng.standard_normal((4, 3)) - np.array([10.0, 0.0, 0.0])
        s = np.vstack([a, b])
        truth = as_partition([0, 0, 0, 0, 1, 1, 1, 1])
        # ground truth is the brute-force optimum of the K-means objective
        def km_cost(labels):
            return sum(
                float(((s[labels == j] - s[labels == j].mean(axis=0)) ** 2).sum())
                for j in np.unique(labels)
            )
        best = min(two_partitions(8), key=km_cost)
        assert as_partition(best) == truth
        for seed in range(5):
            model = kmeans(make_samples(s), K=2, m=1, seed=seed)
            assert as_partition(model.assignments) == truth

    def test_each_sample_its_own_cluster(self):
        rng = np.random.default_rng(9)
        samples = random_samples(rng, 6, 4)
        model = kmeans(samples, K=6, m=1, seed=1)
        assert sorted(model.assignments.tolist()) == list(range(6))
        assert model.costs_trace[-1] == 0.0

    def test_rejects_bad_counts(self):
        rng = np.random.default_rng(10)
        samples = random_samples(rng, 4, 3)
        with pytest.raises(ValueError):
            kmeans(samples, K=5, m=1, seed=0)
        with pytest.raises(ValueError):
            kmeans(samples, K=2, m=4, seed=0)

    def test_iteration_cap_raises(self):
        rng = np.random.default_rng(11)
        with pytest.raises(IterationCapError):
            kmeans(random_samples(rng, 6, 3), K=2, m=1, seed=0, max_iter=0)


def two_line_samples():
    """Four samples on each of two well-separated affine lines in R^5."""
    t = np.array([-1.5, -0.5, 0.5, 1.5])
    d1 = np.array([1.0, 1.0, 0.0, 0.0, 0.0]) / np.sqrt(2.0)
    d2 = np.array([0.0, 0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    b2 = np.array([20.0, 5.0, 5.0, 5.0, 5.0])
    s = np.vstack([t[:, None] * d1, b2 + t[:, None] * d2])
    return s, np.array([0, 0, 0, 0, 1, 1, 1, 1])


class TestKsvd:
    def test_identical_samples_converge_in_one_sweep(self):
        s = np.tile([2.0, -1.0, 0.5], (5, 1))
        model = ksvd(make_samples(s), m_per_cluster=[1, 1], seed=0)
        assert model.n_iter == 1
        assert model.costs_trace[-1] == 0.0

    def test_two_affine_lines(self):
        s, truth = two_line_samples()
        model = ksvd(make_samples(s), m_per_cluster=[1, 1], seed=0)
        assert as_partition(model.assignments) == as_partition(truth)
        scale = float(np.max(np.sum(s**2, axis=1)))
        assert model.costs_trace[-1] <= 1e-16 * scale
        # brute force over all 2-partitions: the split by line is the unique
        # (near-)zero-cost optimum, every mixed partition stays well away
        wrong = []
        for labels in two_partitions(8):
            c = partition_cost(s, labels, m=1)
            if as_partition(labels) == as_partition(truth):
                assert c <= 1e-16 * scale
            else:
                wrong.append(c)
        assert min(wrong) > 1e-2

    def test_single_cluster_equals_svd_basis(self):
        rng = np.random.default_rng(12)
        samples = random_samples(rng, 10, 4)
        model = ksvd(samples, m_per_cluster=[2], seed=0)
        ref = svd_basis(samples, m=2)
        assert np.array_equal(model.bases[0].phi0, ref.phi0)
        assert np.array_equal(model.bases[0].Phi, ref.Phi)

    def test_per_cluster_dimensions(self):
        rng = np.random.default_rng(13)
        model = ksvd(random_samples(rng, 20, 5), m_per_cluster=[3, 1], seed=2)
        assert [b.Phi.shape for b in model.bases] == [(5, 3), (5, 1)]

    def test_rejects_bad_init(self):
        rng = np.random.default_rng(14)
        samples = random_samples(rng, 6, 3)
        with pytest.raises(ValueError):
            ksvd(samples, m_per_cluster=[1, 1], init=np.zeros(5, dtype=int))
        with pytest.raises(ValueError):
            ksvd(samples, m_per_cluster=[1, 1], init=np.zeros(6, dtype=int))
        with pytest.raises(ValueError):
            ksvd(samples, m_per_cluster=[1, 1], init=np.array([0, 0, 0, 0, 0, 2]))

    def test_iteration_cap_raises(self):
        rng = np.random.default_rng(15)
        with pytest.raises(IterationCapError):
            ksvd(random_samples(rng, 8, 3), m_per_cluster=[1, 1], seed=0, max_iter=0)


class TestKsvdCost:
    def test_full_dimension_bases_cost_zero(self):
        rng = np.random.default_rng(16)
        samples = random_samples(rng, 10, 4)
        model = ksvd(samples, m_per_cluster=[4, 4], seed=0)
        assert ksvd_cost(model, samples) <= 1e-20

    def test_single_sample_clusters_cost_zero(self):
        rng = np.random.default_rng(17)
        samples = random_samples(rng, 5, 3)
        for m in (0, 1, 2):
            model = ksvd(
                samples, m_per_cluster=[m] * 5, init=np.arange(5), seed=0
            )
            assert ksvd_cost(model, samples) == 0.0

    def test_direct_evaluation_matches_trailing_singular_values(self):
        rng = np.random.default_rng(18)
        samples = random_samples(rng, 40, 8)
        model = ksvd(samples, m_per_cluster=[2, 2, 2], seed=3)
        direct = ksvd_cost(model, samples)
        assert direct == pytest.approx(model.costs_trace[-1], rel=1e-8)
        # and against the in-test oracle on the final partition
        oracle = partition_cost(samples.s_stars, model.assignments, m=2)
        assert direct == pytest.approx(oracle, rel=1e-8)


class TestReassignDistance:
    def test_at_offset(self):
        basis = Basis(phi0=np.array([1.0, 2.0]), Phi=np.eye(2)[:, :1])
        assert reassign_distance(np.array([1.0, 2.0]), basis) == 0.0

    def test_in_span(self):
        rng = np.random.default_rng(19)
        q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        basis = Basis(phi0=rng.standard_normal(6), Phi=q)
        s = basis.phi0 + q @ np.array([3.0, -0.7])
        assert reassign_distance(s, basis) <= 1e-24

    def test_matches_least_squares_oracle(self):
        rng = np.random.default_rng(20)
        q, _ = np.linalg.qr(rng.standard_normal((7, 3)))
        basis = Basis(phi0=rng.standard_normal(7), Phi=q)
        for _ in range(20):
            s = 3.0 * rng.standard_normal(7)
            v, res, *_ = np.linalg.lstsq(q, s - basis.phi0, rcond=None)
            direct = float(np.sum((s - basis.phi0 - q @ v) ** 2))
            assert reassign_distance(s, basis) == pytest.approx(direct, abs=1e-10)


class TestScaleSensitivity:
    """Samples [10,0,0], [100,0,0], [10,1,0]: the collinear pair is far apart
    in Euclidean distance but spans a common direction. Every 2-partition of
    three points has zero subspace cost (any pair is affinely collinear), so
    the discriminating behavior is which grouping each method settles on."""

    s = np.array([[10.0, 0.0, 0.0], [100.0, 0.0, 0.0], [10.0, 1.0, 0.0]])
    collinear = as_partition([0, 0, 1])
    euclidean = as_partition([0, 1, 0])

    def test_all_two_partitions_tie_at_zero_subspace_cost(self):
        for labels in two_partitions(3):
            assert partition_cost(self.s, labels, m=1) <= 1e-20

    def test_kmeans_objective_strictly_prefers_euclidean_grouping(self):
        def km_cost(labels):
            return sum(
                float(((self.s[np.asarray(labels) == j]
                        - self.s[np.asarray(labels) == j].mean(axis=0)) ** 2).sum())
                for j in (0, 1)
            )
        assert km_cost([0, 1, 0]) < 1.0 < km_cost([0, 0, 1])

    def test_kmeans_groups_by_distance(self):
        for seed in range(5):
            model = kmeans(make_samples(self.s), K=2, m=1, seed=seed)
            assert as_partition(model.assignments) == self.euclidean

    def test_ksvd_keeps_the_collinear_grouping(self):
        model = ksvd(
            make_samples(self.s), m_per_cluster=[1, 1], init=np.array([0, 0, 1])
        )
        assert as_partition(model.assignments) == self.collinear
        assert model.n_iter == 1
        assert model.costs_trace[-1] <= 1e-20


@st.composite
def clustering_inputs(draw):
    M = draw(st.integers(3, 12))
    n = draw(st.integers(2, 5))
    K = draw(st.integers(1, min(3, M)))
    ms = [draw(st.integers(0, n)) for _ in range(K)]
    seed = draw(st.integers(0, 2**32 - 1))
    kind = draw(st.sampled_from(["random", "clouds", "duplicates"]))
    rng = np.random.default_rng(seed)
    if kind == "random":
        s = rng.standard_normal((M, n))
    elif kind == "clouds":
        centers = 5.0 * rng.standard_normal((K, n))
        s = centers[rng.integers(0, K, size=M)] + 0.2 * rng.standard_normal((M, n))
    else:
        s = rng.standard_normal((M, n))
        s[M // 2 :] = s[: M - M // 2]  # exact repeats exercise tie-breaking
    return make_samples(s), ms, seed


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(clustering_inputs())
    def test_descent_termination_and_structure(self, inputs):
        samples, ms, seed = inputs
        model = ksvd(samples, m_per_cluster=ms, seed=seed)
        trace = np.asarray(model.costs_trace)
        slack = 1e-12 * trace[0] if trace[0] > 0 else 1e-15
        assert np.all(np.diff(trace) <= slack)
        assert model.n_iter <= 1000
        assert set(np.unique(model.assignments)) == set(range(len(ms)))
        for basis in model.bases:
            if basis.m:
                gram = basis.Phi.T @ basis.Phi
                assert np.max(np.abs(gram - np.eye(basis.m))) <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(clustering_inputs())
    def test_bitwise_determinism(self, inputs):
        samples, ms, seed = inputs
        a = ksvd(samples, m_per_cluster=ms, seed=seed)
        b = ksvd(samples, m_per_cluster=ms, seed=seed)
        assert a.to_json() == b.to_json()
        assert a.costs_trace == b.costs_trace and a.n_iter == b.n_iter
        ka = kmeans(samples, K=len(ms), m=max(ms), seed=seed)
        kb = kmeans(samples, K=len(ms), m=max(ms), seed=seed)
        assert ka.to_json() == kb.to_json()


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(21)
        samples = random_samples(rng, 15, 4)
        model = ksvd(samples, m_per_cluster=[2, 1], seed=0)
        back = ClusterModel.from_json(model.to_json())
        assert back.K == model.K
        assert back.m_per_cluster == model.m_per_cluster
        assert np.array_equal(back.assignments, model.assignments)
        for ba, bb in zip(back.bases, model.bases):
            assert np.array_equal(ba.phi0, bb.phi0)
            assert np.array_equal(ba.Phi, bb.Phi)
        assert ksvd_cost(back, samples) == ksvd_cost(model, samples)

    def test_rejects_unknown_version(self):
        rng = np.random.default_rng(22)
        model = ksvd(random_samples(rng, 6, 3), m_per_cluster=[1], seed=0)
        blob = json.loads(model.to_json())
        blob["version"] = 2
        with pytest.raises(ValueError):
            ClusterModel.from_json(json.dumps(blob))


class TestSampleSet:
    def test_validate(self):
        rng = np.random.default_rng(23)
        samples = random_samples(rng, 4, 3)
        assert samples.validate() is samples
        assert samples.M == 4 and samples.n == 3

    def test_rejects_empty_and_mismatched(self):
        with pytest.raises(ValueError):
            make_samples(np.zeros((0, 3))).validate()
        bad = SampleSet(
            thetas=np.zeros((3, 2)), s_stars=np.zeros((4, 3)), lambdas_max=np.ones(4)
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_multiplier_threshold(self):
        s = SampleSet(
            thetas=np.zeros((3, 2)),
            s_stars=np.zeros((3, 2)),
            lambdas_max=np.array([1.0, 1e-6, 1.0]),
        )
        with pytest.raises(ValueError):
            s.validate(eps_lambda=1e-3)
        s.validate(eps_lambda=1e-8)
