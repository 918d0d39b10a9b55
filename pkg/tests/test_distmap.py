import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adam_pipe.data_model import FoveaCoordinate
from adam_pipe.distmap import (
    DistanceMap,
    DistmapConfig,
    build_target,
    euclidean_distance_field,
    extract_fovea,
    load_distance_map,
    normalize_invert,
    save_distance_map,
    truncate_radius,
)
from adam_pipe.errors import DataError
from oracles import brute_force_field


def test_edt_matches_brute_force(rng):
    for _ in range(20):
        h, w = rng.integers(1, 40, 2)
        p = FoveaCoordinate(rng.uniform(0, w - 1e-6), rng.uniform(0, h - 1e-6))
        got = euclidean_distance_field(int(h), int(w), p)
        assert np.abs(got - brute_force_field(h, w, p.x, p.y)).max() < 1e-9


def test_edt_pythagorean_case():
    f = euclidean_distance_field(10, 10, FoveaCoordinate(0, 0))
    assert f[4, 3] == 5.0 and f[3, 4] == 5.0 and f[0, 0] == 0.0


def test_edt_point_outside():
    with pytest.raises(DataError):
        euclidean_distance_field(5, 5, FoveaCoordinate(5, 0))


def test_normalize_invert_cases():
    assert np.allclose(normalize_invert(np.array([[0.0, 2.0, 4.0]])), [[1.0, 0.5, 0.0]])
    assert (normalize_invert(np.zeros((2, 2))) == 1).all()
    with pytest.raises(ValueError):
        normalize_invert(np.array([[-1.0]]))


def test_truncate_ramp_values():
    v = truncate_radius(np.zeros((11, 11)), FoveaCoordinate(5, 5), 4.0)
    assert v[5, 5] == 1.0
    assert v[5, 7] == pytest.approx(0.5)
    assert v[5, 9] == 0.0 and v[0, 0] == 0.0


def test_truncate_disk_pixel_count():
    r = 6.0
    v = truncate_radius(np.ones((31, 31)), FoveaCoordinate(15, 15), r, mode="global")
    expected = sum(1 for dr in range(-15, 16) for dc in range(-15, 16) if dr * dr + dc * dc <= r * r)
    assert int((v > 0).sum()) == expected


def test_ramp_with_full_radius_is_normalize_invert(rng):
    p = FoveaCoordinate(7.3, 2.1)
    f = euclidean_distance_field(20, 30, p)
    ramp = truncate_radius(normalize_invert(f), p, f.max())
    assert np.allclose(ramp, normalize_invert(f), atol=1e-12)


def test_bad_radius_and_mode():
    with pytest.raises(ValueError):
        truncate_radius(np.zeros((3, 3)), FoveaCoordinate(1, 1), 0)
    with pytest.raises(ValueError):
        truncate_radius(np.zeros((3, 3)), FoveaCoordinate(1, 1), 1, mode="box")


def test_config_radius():
    assert DistmapConfig().radius_for(64, 80) == pytest.approx(9.6)
    assert DistmapConfig(mode="x").problems()


def test_distance_map_range_checked():
    with pytest.raises(ValueError):
        DistanceMap(np.full((2, 2), 1.5))


@pytest.mark.parametrize("mode", ["ramp", "global"])
def test_target_peak_at_fovea(mode):
    t = build_target(64, 64, FoveaCoordinate(20, 30), 9.6, mode)
    assert np.unravel_index(np.argmax(t.values), t.values.shape) == (30, 20)
    assert t.values.min() == 0.0


def test_extract_round_trip_integer():
    p = extract_fovea(build_target(64, 64, FoveaCoordinate(20, 30), 9.6))
    assert p.x == pytest.approx(20, abs=1e-9) and p.y == pytest.approx(30, abs=1e-9)


def test_extract_singleton_peak():
    v = np.zeros((50, 50))
    v[10, 40] = 1.0
    p = extract_fovea(v)
    assert (p.x, p.y) == (40.0, 10.0)


def test_extract_picks_larger_blob():
    v = np.zeros((100, 100))
    v[10:12, 10:12] = 1.0       # 4 px, brightest
    v[70:80, 50:60] = 0.9       # 100 px
    p = extract_fovea(v)
    assert p.x == pytest.approx(54.5) and p.y == pytest.approx(74.5)


def test_extract_tie_prefers_global_max():
    v = np.zeros((100, 100))
    v[10:15, 10:15] = 0.5
    v[60:65, 60:65] = 0.5
    v[62, 62] = 0.6
    p = extract_fovea(v)
    assert p.x > 50 and p.y > 50


def test_extract_constant_raises():
    with pytest.raises(DataError, match="no fovea"):
        extract_fovea(np.full((10, 10), 0.3))


@settings(max_examples=60, deadline=None)
@given(st.integers(64, 160), st.integers(64, 160), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_extract_round_trip_random(h, w, fx, fy, fr):
    # interior: the whole truncation disk lies inside the frame
    radius = 10 + fr * (min(h, w) / 3 - 10)
    p = FoveaCoordinate(radius + fx * (w - 1 - 2 * radius), radius + fy * (h - 1 - 2 * radius))
    q = extract_fovea(build_target(h, w, p, radius))
    assert math.hypot(q.x - p.x, q.y - p.y) <= 1.5


def test_extract_round_trip_large_frame():
    p = extract_fovea(build_target(300, 320, FoveaCoordinate(100.0, 150.0), 50))
    assert math.hypot(p.x - 100, p.y - 150) <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_selected_pixels_invariant_under_monotone_map(seed):
    # the thresholded set depends only on the ordering of values; the centroid
    # is additionally invariant to positive scaling
    rng = np.random.default_rng(seed)
    v = rng.random((24, 24))
    a = extract_fovea(v)
    b = extract_fovea(v * 3.0)
    assert b.x == pytest.approx(a.x, abs=1e-9) and b.y == pytest.approx(a.y, abs=1e-9)
    # an arbitrary strictly increasing map keeps the selected pixel set, so the
    # centroid can only move within that set's bounding box
    mask = v >= np.sort(v, axis=None)[-6]
    rows, cols = np.nonzero(mask)
    for g in (np.exp, np.sqrt, lambda x: x ** 3):
        c = extract_fovea(g(v))
        labels_ok = (rows.min() - 1e-9 <= c.y <= rows.max() + 1e-9
                     and cols.min() - 1e-9 <= c.x <= cols.max() + 1e-9)
        assert labels_ok


def test_16bit_round_trip(tmp_path, rng):
    v = rng.random((20, 30))
    save_distance_map(tmp_path / "m.png", DistanceMap(v))
    back = load_distance_map(tmp_path / "m.png").values
    assert np.abs(back - v).max() <= 0.5 / 65535 + 1e-12
