import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evfocal.breathing import (BreathingProfile, EstimationError, apply_homography,
                               correspondences_for, estimate_homography, normalize_homography,
                               profile_from_correspondences, scale_about, synth_breathing_profile,
                               warp_events)
from evfocal.eventsim import EventStream, SimConfig, simulate
from evfocal.scenegen import CameraParams, SceneSpec, Texture, render_focal_stack


def _grid_points(n=6, size=64.0):
    g = np.linspace(5, size - 5, n)
    gx, gy = np.meshgrid(g, g)
    return np.c_[gx.ravel(), gy.ravel()]


def _random_homography(rng, strength=0.05):
    m = np.eye(3) + rng.normal(0, strength, (3, 3)) * np.array([[1, 1, 20], [1, 1, 20], [1e-3, 1e-3, 0]])
    return normalize_homography(m)


def test_identity_correspondences_give_identity():
    pts = _grid_points()
    m, rms = estimate_homography(pts, pts)
    assert np.allclose(m, np.eye(3), atol=1e-10) and rms < 1e-9


def test_similarity_recovered():
    s, th = 1.02, np.deg2rad(3)
    m = np.array([[s * np.cos(th), -s * np.sin(th), 2.0], [s * np.sin(th), s * np.cos(th), -1.5], [0, 0, 1]])
    src = _grid_points()
    dst = np.c_[apply_homography(m, src[:, 0], src[:, 1])]
    est, _ = estimate_homography(src, dst)
    assert np.allclose(est, m, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_dlt_recovers_random_homographies(seed):
    m = _random_homography(np.random.default_rng(seed))
    src = _grid_points()
    dst = np.c_[apply_homography(m, src[:, 0], src[:, 1])]
    est, rms = estimate_homography(src, dst)
    assert np.max(np.abs(est - m)) < 1e-6 and rms < 1e-6


def test_noisy_correspondences_have_small_residual():
    m = scale_about(1.02, 31.5, 31.5)
    obs, ref = correspondences_for(m, 64, 64, n_side=8, noise_px=0.2, seed=3)
    _, rms = estimate_homography(obs, ref)
    assert rms <= 0.5


@pytest.mark.parametrize("pts", [
    np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    np.c_[np.arange(6.0), 2 * np.arange(6.0)],
])
def test_degenerate_point_sets_rejected(pts):
    with pytest.raises(EstimationError):
        estimate_homography(pts, pts)


def test_mismatched_inputs_rejected():
    with pytest.raises(EstimationError):
        estimate_homography(_grid_points(), _grid_points()[:-1])


def test_synth_profile_scales():
    prof = synth_breathing_profile(1.03, 5, 64, 64)
    scales = [m[0, 0] for m in prof.matrices]
    assert np.allclose(scales, [1.0, 1.0075, 1.015, 1.0225, 1.03], atol=1e-12)
    # the centre is a fixed point of every entry
    for m in prof.matrices:
        cx, cy = apply_homography(m, np.array([31.5]), np.array([31.5]))
        assert cx[0] == pytest.approx(31.5) and cy[0] == pytest.approx(31.5)


def test_profile_validation():
    with pytest.raises(ValueError):
        BreathingProfile([0.5, 0.2], [np.eye(3)] * 2)
    with pytest.raises(ValueError):
        BreathingProfile([0.0, 1.0], [scale_about(1.1, 0, 0), np.eye(3)])
    with pytest.raises(ValueError):
        synth_breathing_profile(0.9, 4, 8, 8)


def test_nearest_breaks_ties_towards_earlier_entry():
    prof = synth_breathing_profile(1.03, 3, 8, 8)   # fractions 0, 0.5, 1
    assert list(prof.nearest(np.array([0.0, 0.24, 0.25, 0.26, 0.75, 1.0]))) == [0, 0, 0, 1, 1, 2]


def _interior_events(rng, n, W=64, H=64):
    # keep clear of the border so a 3% zoom does not push events outside
    x = rng.uniform(4, W - 5, n)
    y = rng.uniform(4, H - 5, n)
    t = np.sort(rng.uniform(0, 1e9, n))
    return EventStream(x, y, t, rng.choice(np.array([-1, 1], np.int8), n), W, H)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1.0, 1.03), st.integers(2, 20))
def test_correct_inverts_inject(seed, max_scale, n_entries):
    ev = _interior_events(np.random.default_rng(seed), 500)
    prof = synth_breathing_profile(max_scale, n_entries, 64, 64)
    back = warp_events(warp_events(ev, prof, "inject"), prof, "correct")
    assert len(back) == len(ev)
    assert np.max(np.abs(back.x - ev.x)) < 1e-9 and np.max(np.abs(back.y - ev.y)) < 1e-9
    assert np.array_equal(back.t, ev.t) and np.array_equal(back.p, ev.p)


def test_identity_profile_keeps_integer_coordinates():
    ev = EventStream(np.array([0, 3], np.int32), np.array([1, 2], np.int32), np.array([0.0, 1e8]),
                     np.array([1, -1], np.int8), 4, 4)
    out = warp_events(ev, synth_breathing_profile(1.0, 4, 4, 4), "correct")
    assert not out.subpixel and np.array_equal(out.x, ev.x)


def test_warp_drops_events_pushed_outside_and_preserves_order():
    ev = EventStream(np.array([0.0, 31.5, 63.0]), np.array([0.0, 31.5, 63.0]),
                     np.array([9e8, 9.5e8, 1e9]), np.array([1, 1, -1], np.int8), 64, 64)
    out = warp_events(ev, synth_breathing_profile(1.03, 4, 64, 64), "inject")
    assert len(out) == 1 and out.x[0] == pytest.approx(31.5)
    with pytest.raises(ValueError):
        warp_events(ev, synth_breathing_profile(1.03, 4, 64, 64), "sideways")


def _chunk_centroids(ev, lo, hi, n_chunks=8):
    """Time-weighted x-centroid of events in columns [lo, hi) per sweep chunk."""
    sel = (ev.x >= lo) & (ev.x < hi)
    x, t = np.asarray(ev.x, float)[sel], ev.t[sel]
    edges = np.linspace(0, ev.duration, n_chunks + 1)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (t >= a) & (t < b)
        out.append(x[m].mean())
    return np.array(out)


def test_breathing_drift_on_an_edge_and_its_removal():
    cam = CameraParams.desk()
    # vertical step edge at x = 48, right of the optical centre (31.5)
    tex = Texture("stripes", scale=128.0, phase_x=-48.0, lo=0.2, hi=0.8)
    stack = render_focal_stack(SceneSpec((), 0.5, tex), cam, K=64)
    ev = simulate(stack, SimConfig(contrast_threshold=0.02))
    prof = synth_breathing_profile(1.03, 16, 64, 64)
    injected = warp_events(ev, prof, "inject")
    corrected = warp_events(injected, prof, "correct")
    base = _chunk_centroids(ev, 40, 58)
    drift = _chunk_centroids(injected, 40, 58) - base
    assert np.all(np.diff(drift) > 0) and drift[-1] > 0.3
    assert np.max(np.abs(_chunk_centroids(corrected, 40, 58) - base)) < 0.1


def test_homography_composition():
    rng = np.random.default_rng(7)
    a, b = _random_homography(rng), _random_homography(rng)
    pts = _grid_points()
    x1, y1 = apply_homography(a, pts[:, 0], pts[:, 1])
    x2, y2 = apply_homography(b, x1, y1)
    x3, y3 = apply_homography(b @ a, pts[:, 0], pts[:, 1])
    assert np.allclose(x2, x3) and np.allclose(y2, y3)


def test_json_round_trip(tmp_path):
    prof = synth_breathing_profile(1.02, 6, 32, 24)
    path = tmp_path / "profile.json"
    prof.save(path)
    back = BreathingProfile.load(path)
    assert np.array_equal(back.fractions, prof.fractions)
    assert np.array_equal(back.matrices, prof.matrices)


def test_profile_from_noise_free_correspondences_matches_truth():
    true = synth_breathing_profile(1.03, 6, 64, 64)
    pairs = [correspondences_for(m, 64, 64) for m in true.matrices]
    est = profile_from_correspondences(true.fractions, pairs, 0)
    assert np.max(np.abs(est.matrices - true.matrices)) < 1e-9


def test_similarity_about_the_centre_from_twelve_points():
    s, c = 1.02, 31.5
    m = np.array([[s, 0, c * (1 - s) + 0.3], [0, s, c * (1 - s) + 0.3], [0, 0, 1.0]])
    src = np.random.default_rng(12).uniform(0, 63, (12, 2))
    dst = np.c_[apply_homography(m, src[:, 0], src[:, 1])]
    est, _ = estimate_homography(src, dst)
    assert np.max(np.abs(est - m)) < 1e-6


def test_unit_max_scale_gives_identity_entries():
    prof = synth_breathing_profile(1.0, 7, 64, 48)
    assert all(np.array_equal(m, np.eye(3)) for m in prof.matrices)


def test_generated_entries_are_invertible():
    for m in synth_breathing_profile(1.03, 16, 64, 64).matrices:
        assert abs(np.linalg.det(m)) > 1e-6 and m[2, 2] == 1.0
