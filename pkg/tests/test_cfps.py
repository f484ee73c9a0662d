import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from isacsim.detect import ClutterRegion, PeakFeatures, cfps_detect, learn_clutter_region
from isacsim.detect.hull import (
    check_not_collinear, concave_hull, convex_hull, is_simple, point_in_polygon, polygon_area,
)
from isacsim.errors import DegenerateGeometry, TooFewSamples

COV = np.array([[1.0, 0.5, 0.2], [0.5, 2.0, 0.0], [0.2, 0.0, 0.5]])
MEAN = np.array([0.0, 20.0, 3.0])


def ball(rng, n):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * rng.uniform(0, 1, n)[:, None] ** (1 / 3)


def disk(rng, n):
    a = rng.uniform(0, 2 * np.pi, n)
    r = np.sqrt(rng.uniform(0, 1, n))
    return np.c_[r * np.cos(a), r * np.sin(a)]


def as_features(vectors):
    return [PeakFeatures(10 ** (a / 10), loc, w, 0) for loc, a, w in vectors]


def test_disk_region_covers_fresh_samples():
    rng = np.random.default_rng(21)
    d = disk(rng, 2000)
    train = np.c_[d[:, 0], d[:, 1], rng.uniform(1, 2, 2000)]
    region = learn_clutter_region(train, pfa=0.01, concavity=8)
    fresh = disk(rng, 10_000)
    fresh = np.c_[fresh[:, 0], fresh[:, 1], rng.uniform(1, 2, 10_000)]
    assert region.contains(fresh).mean() >= 0.99


def test_ball_region_covers_fresh_samples():
    rng = np.random.default_rng(4)
    region = learn_clutter_region(ball(rng, 2000), pfa=0.01)
    assert region.contains(ball(rng, 10_000)).mean() >= 0.99


def test_zero_pfa_keeps_every_training_point(rng):
    train = rng.multivariate_normal(MEAN, COV, 500)
    region = learn_clutter_region(train, pfa=0.0)
    assert region.margin == 0.0
    assert region.contains(train).all()


def test_convex_points_without_concavity_give_convex_hull(rng):
    pts = rng.standard_normal((300, 2))
    poly = concave_hull(pts, k=None)
    expected = {tuple(p) for p in pts[ConvexHull(pts).vertices]}
    assert {tuple(p) for p in poly} == expected
    assert polygon_area(poly) > 0  # counter-clockwise


def test_concave_hull_follows_a_notch():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 1, (3000, 2))
    pts = pts[~((pts[:, 0] > 0.4) & (pts[:, 0] < 0.6) & (pts[:, 1] > 0.3))]  # U shape
    convex = convex_hull(pts)
    concave = concave_hull(pts, k=8)
    notch = np.array([[0.5, 0.8]])
    assert point_in_polygon(convex, notch)[0]
    assert not point_in_polygon(concave, notch)[0]
    assert abs(polygon_area(concave)) < abs(polygon_area(convex))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 150), st.sampled_from([3, 5, 8, 15]),
       st.sampled_from(["chi", "knn"]))
def test_concave_hull_is_simple_and_encloses_points(seed, n, k, strategy):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2)) * [1.0, 0.3]
    poly = concave_hull(pts, k=k, strategy=strategy)
    assert is_simple(poly)
    assert point_in_polygon(poly, pts).all()


def test_point_in_polygon_against_shapely(rng):
    shapely = pytest.importorskip("shapely")
    from shapely.geometry import Point, Polygon

    pts = rng.standard_normal((400, 2))
    poly = concave_hull(pts, k=6)
    shape = Polygon(poly)
    assert shape.is_valid
    probe = rng.uniform(-3, 3, (2000, 2))
    ours = point_in_polygon(poly, probe)
    theirs = np.array([shape.covers(Point(p)) for p in probe])
    assert np.array_equal(ours, theirs)


def test_collinear_points_are_degenerate():
    line = np.c_[np.arange(10.0), 2 * np.arange(10.0)]
    with pytest.raises(DegenerateGeometry):
        check_not_collinear(line)
    features = np.c_[np.arange(300.0), np.full(300, 10.0), np.ones(300)]
    with pytest.raises(DegenerateGeometry):
        learn_clutter_region(features)


def test_too_few_samples(rng):
    with pytest.raises(TooFewSamples):
        learn_clutter_region(rng.multivariate_normal(MEAN, COV, 199))


def test_clutter_only_false_alarm_rate():
    rng = np.random.default_rng(2024)
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 5000), pfa=0.01)
    fresh = rng.multivariate_normal(MEAN, COV, 20_000)
    fresh[:, 2] = np.abs(fresh[:, 2])
    cells = {i: as_features([v]) for i, v in enumerate(fresh)}
    rate = len(cfps_detect(cells, region, zero_doppler_guard=0.0)) / len(cells)
    assert 0.005 <= rate <= 0.02


def test_centroid_peak_is_not_detected(rng):
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 500))
    assert cfps_detect({0: as_features([region.offset])}, region, 0.0) == []


def test_location_outside_extent_is_detected(rng):
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 500))
    lo, hi = region.location_extent()
    peak = as_features([[hi + 0.5, MEAN[1], MEAN[2]]])
    (det,) = cfps_detect({7: peak}, region, zero_doppler_guard=0.1)
    assert det.range_bin == 7 and det.score == pytest.approx(hi + 0.5)
    # The zero-Doppler guard vetoes anomalous peaks too close to DC.
    assert cfps_detect({7: peak}, region, zero_doppler_guard=hi + 1.0) == []


def test_decisions_invariant_under_normalisation(rng):
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 800))
    probe = rng.multivariate_normal(MEAN, 3 * COV, 3000)
    identity = ClutterRegion(region.mode, np.zeros(3), np.ones(3), region.concavity, region.trained_pfa,
                             region.margin, region.hulls, region.interval)
    assert np.array_equal(region.contains(probe), identity.contains(region.normalize(probe)))


def test_location_mode(rng):
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 800), mode="location")
    assert region.hulls == {}
    lo, hi = region.location_extent()
    assert region.contains(np.array([[0.5 * (lo + hi), -50.0, 99.0]]))[0]
    assert not region.contains(np.array([[hi + 1.0, MEAN[1], MEAN[2]]]))[0]


def test_text_roundtrip(rng):
    region = learn_clutter_region(rng.multivariate_normal(MEAN, COV, 600))
    again = ClutterRegion.from_text(region.to_text())
    probe = rng.multivariate_normal(MEAN, 4 * COV, 2000)
    assert np.array_equal(region.contains(probe), again.contains(probe))
    assert again.to_text() == region.to_text()
    assert region.to_text().startswith("isacsim-clutter-region v1\n")
