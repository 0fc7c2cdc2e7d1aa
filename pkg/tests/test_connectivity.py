import math

import numpy as np
import pytest

from dccl import connectivity as cn

from conftest import brute_force_threshold


def records_from(vectors, class_ids, domain_ids=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    domain_ids = domain_ids if domain_ids is not None else [0] * len(vectors)
    return [
        cn.EmbeddingRecord(i, int(c), int(d), vectors[i])
        for i, (c, d) in enumerate(zip(class_ids, domain_ids))
    ]


def test_collinear_fixture():
    pts = np.array([[0.0], [1.0], [3.0]])
    mu, sigma, count = cn.pairwise_stats(pts)
    assert count == 3
    assert mu == pytest.approx(2.0)
    assert sigma == pytest.approx(math.sqrt(2.0 / 3.0))
    assert cn.connecting_threshold(pts) == pytest.approx(2.0)
    # score (tau - mu) / sigma == 0 exactly
    report = cn.connectivity_report(records_from(pts, [0, 0, 0]))
    assert report.rows[0].score == pytest.approx(0.0, abs=1e-12)


def test_unit_square_fixture():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    mu, sigma, count = cn.pairwise_stats(pts)
    assert count == 6
    assert mu == pytest.approx((4.0 + 2.0 * math.sqrt(2.0)) / 6.0)
    assert cn.connecting_threshold(pts) == pytest.approx(1.0)


def test_two_points():
    pts = np.array([[0.0, 0.0], [0.3, 0.4]])
    assert cn.connecting_threshold(pts) == pytest.approx(0.5)


def test_two_identical_points_undefined_score():
    report = cn.connectivity_report(records_from([[1.0, 1.0], [1.0, 1.0]], [0, 0]))
    row = report.rows[0]
    assert row.mu == 0.0 and row.sigma == 0.0 and row.score is None
    assert report.mean_score is None


def test_mst_matches_brute_force_on_random_sets(rng):
    for trial in range(200):
        k = int(rng.integers(2, 13))
        d = int(rng.integers(1, 5))
        pts = rng.standard_normal((k, d)) * rng.uniform(0.5, 3.0)
        assert cn.connecting_threshold(pts) == brute_force_threshold(pts)


def test_score_invariant_under_isometry_and_scale(rng):
    pts = rng.standard_normal((12, 3))
    base = cn.connectivity_report(records_from(pts, [0] * 12)).rows[0].score
    # translation
    shifted = pts + np.array([5.0, -2.0, 0.7])
    assert cn.connectivity_report(records_from(shifted, [0] * 12)).rows[0].score == pytest.approx(base)
    # rotation in the first two coordinates
    angle = 0.83
    rot = np.array([
        [math.cos(angle), -math.sin(angle), 0.0],
        [math.sin(angle), math.cos(angle), 0.0],
        [0.0, 0.0, 1.0],
    ])
    rotated = pts @ rot.T
    assert cn.connectivity_report(records_from(rotated, [0] * 12)).rows[0].score == pytest.approx(base)
    # uniform scaling: tau and mu scale, sigma scales, the score does not
    assert cn.connectivity_report(records_from(2.5 * pts, [0] * 12)).rows[0].score == pytest.approx(base)


def test_duplicate_point_never_increases_tau(rng):
    for trial in range(30):
        pts = rng.standard_normal((8, 2))
        tau = cn.connecting_threshold(pts)
        dup = np.vstack([pts, pts[int(rng.integers(8))]])
        assert cn.connecting_threshold(dup) <= tau + 1e-12


def test_split_clusters_score_higher_than_single_blob(rng):
    blob = rng.normal(0.0, 0.2, size=(40, 2))
    split = np.vstack([
        rng.normal(0.0, 0.2, size=(20, 2)),
        rng.normal(8.0, 0.2, size=(20, 2)),
    ])
    tight = cn.connectivity_report(records_from(blob, [0] * 40)).rows[0].score
    broken = cn.connectivity_report(records_from(split, [0] * 40)).rows[0].score
    assert broken > tight


def test_singleton_class_marked_undefined_and_excluded():
    vectors = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]
    report = cn.connectivity_report(records_from(vectors, [0, 0, 0, 1]))
    by_class = {row.class_id: row for row in report.rows}
    assert not by_class[1].defined
    assert by_class[0].defined
    assert report.mean_score == pytest.approx(by_class[0].score)


def test_per_domain_mode_groups_by_class_and_domain(rng):
    vectors = rng.standard_normal((12, 2))
    classes = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]
    domains = [0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1]
    report = cn.connectivity_report(records_from(vectors, classes, domains), mode="per-domain")
    keys = [(row.class_id, row.domain_id) for row in report.rows]
    assert keys == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_empty_dump_rejected():
    with pytest.raises(ValueError):
        cn.connectivity_report([])


def test_mixed_dimensions_rejected(rng):
    records = [
        cn.EmbeddingRecord(0, 0, 0, np.zeros(2)),
        cn.EmbeddingRecord(1, 0, 0, np.zeros(3)),
    ]
    with pytest.raises(ValueError):
        cn.connectivity_report(records)


def test_intra_class_variance():
    vectors = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
    labels = np.array([0, 0, 1, 1])
    # class 0: mean (1,0), squared distances 1,1 -> 1; class 1: mean (1,0) -> 1
    assert cn.intra_class_variance(vectors, labels) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cn.intra_class_variance(vectors[:1], labels[:1])
