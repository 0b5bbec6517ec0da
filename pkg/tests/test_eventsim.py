import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evfocal.eventsim import (SWEEP_DURATION_NS, EventStream, SimConfig, merge,
                              reconstruct_log_intensity, simulate, simulate_log)
from evfocal.scenegen import CameraParams, FocalStack, generate_scene, render_focal_stack

from oracles import ramp_crossing_fractions


def _stack(frames):
    frames = np.asarray(frames, dtype=float)
    K, H, W = frames.shape
    return FocalStack(frames, np.linspace(0.2, 2.0, K), np.ones((H, W)))


def _random_stack(seed, K=12, H=6, W=7):
    rng = np.random.default_rng(seed)
    return _stack(rng.uniform(0.05, 1.0, size=(K, H, W)))


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(contrast_threshold=0)
    with pytest.raises(ValueError):
        SimConfig(log_eps=0)
    with pytest.raises(ValueError):
        SimConfig(noise_rate=-1)


def test_constant_stack_gives_no_events():
    ev = simulate(_stack(np.full((10, 4, 5), 0.4)))
    assert len(ev) == 0


def test_empty_stack_is_an_error():
    with pytest.raises(ValueError):
        simulate(_stack(np.zeros((1, 3, 3))))


def test_ramp_gives_three_events_at_analytic_times():
    K = 64
    L = np.linspace(0.0, 0.25, K).reshape(K, 1, 1)
    ev = simulate_log(L, 0.08)
    expected = ramp_crossing_fractions(0.25, 0.08)
    assert expected == pytest.approx([0.32, 0.64, 0.96])
    assert len(ev) == 3
    assert np.all(ev.p == 1)
    assert np.allclose(ev.t / SWEEP_DURATION_NS, expected, atol=1e-9, rtol=0)


def test_ramp_reconstruction_final_level():
    K = 64
    L = np.linspace(0.0, 0.25, K).reshape(K, 1, 1)
    ev = simulate_log(L, 0.08)
    level = reconstruct_log_intensity(ev, L[0], 0.08, [SWEEP_DURATION_NS])
    assert level[0, 0, 0] == pytest.approx(0.24)


def test_reconstruction_without_events_is_initial_level():
    L0 = np.arange(6.0).reshape(2, 3)
    out = reconstruct_log_intensity(EventStream.empty(3, 2), L0, 0.08, [0.0, 5e8])
    assert np.array_equal(out[0], L0) and np.array_equal(out[1], L0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.03, 0.3))
def test_reconstructed_level_tracks_log_intensity(seed, C):
    stack = _random_stack(seed)
    cfg = SimConfig(contrast_threshold=C)
    ev = simulate(stack, cfg, seed)
    L = np.log(stack.frames + cfg.log_eps)
    times = np.linspace(0, SWEEP_DURATION_NS, len(L))
    rec = reconstruct_log_intensity(ev, L[0], C, times)
    assert np.all(np.abs(rec - L) <= C + 1e-12)


def test_timestamps_sorted_and_polarities_valid():
    ev = simulate(_random_stack(3), SimConfig(noise_rate=2.0), seed=3)
    assert np.all(np.diff(ev.t) >= 0)
    assert set(np.unique(ev.p)) <= {-1, 1}
    assert np.all((ev.x >= 0) & (ev.x < 7) & (ev.y >= 0) & (ev.y < 6))


def test_simulation_is_deterministic():
    cfg = SimConfig(noise_rate=1.0, threshold_jitter=0.1)
    a = simulate(_random_stack(4), cfg, seed=9)
    b = simulate(_random_stack(4), cfg, seed=9)
    for f in ("x", "y", "t", "p"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_noise_adds_about_the_requested_rate():
    stack = _stack(np.full((5, 40, 50), 0.5))
    ev = simulate(stack, SimConfig(noise_rate=0.5), seed=1)
    assert abs(len(ev) - 1000) < 5 * np.sqrt(1000)
    assert abs(np.mean(ev.p)) < 0.1


def test_threshold_jitter_changes_events():
    stack = _random_stack(5, H=12, W=12)
    a = simulate(stack, SimConfig(), seed=0)
    b = simulate(stack, SimConfig(threshold_jitter=0.1), seed=0)
    assert len(a) != len(b) or not np.array_equal(a.t, b.t)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_reversal_negates_net_polarity_within_one_event(seed):
    # hysteresis anchors the crossing grid at the first frame, so exact time
    # mirroring does not hold; the per-pixel net count flips sign within +-1
    stack = _random_stack(seed)
    rev = _stack(stack.frames[::-1])
    H, W = stack.frames.shape[1:]

    def net(ev):
        return np.bincount(ev.y * W + ev.x, weights=ev.p.astype(float), minlength=H * W)

    fwd, bwd = net(simulate(stack)), net(simulate(rev))
    assert np.all(np.abs(fwd + bwd) <= 1)


def test_reversal_mirrors_a_symmetric_ramp_exactly():
    # with L_K - L_0 = (n + 1/2) C the forward and reversed crossing levels interleave
    # symmetrically only when the grid is centred; a ramp whose span is (n + 1) C with
    # the endpoints excluded is the case where crossing levels coincide
    K = 33
    C = 0.08
    L = np.linspace(0.0, 4 * C, K).reshape(K, 1, 1) + np.array([0.0]).reshape(1, 1, 1)
    L[-1] -= 1e-12   # keep the endpoint strictly short of the 4th level
    L[0] += 1e-12
    fwd = simulate_log(L, C)
    bwd = simulate_log(L[::-1].copy(), C)
    assert len(fwd) == len(bwd) == 3
    assert np.array_equal(bwd.p, -fwd.p[::-1])
    assert np.allclose(SWEEP_DURATION_NS - bwd.t[::-1], fwd.t, atol=1.0)


def test_event_count_grows_as_threshold_drops():
    cam = CameraParams.desk(32)
    stack = render_focal_stack(generate_scene(3, cam, 2), cam, K=32)
    counts = [len(simulate(stack, SimConfig(contrast_threshold=c))) for c in (0.32, 0.16, 0.08, 0.04)]
    assert counts == sorted(counts) and counts[0] < counts[-1]


def test_noise_free_net_polarity_matches_total_change():
    stack = _random_stack(8)
    cfg = SimConfig()
    ev = simulate(stack, cfg)
    L = np.log(stack.frames + cfg.log_eps)
    H, W = L.shape[1:]
    net = np.bincount(ev.y * W + ev.x, weights=ev.p.astype(float), minlength=H * W).reshape(H, W)
    assert np.all(np.abs(net * cfg.contrast_threshold - (L[-1] - L[0])) <= cfg.contrast_threshold)


def test_merge_keeps_time_order():
    a = simulate(_random_stack(1))
    b = simulate(_random_stack(2))
    m = merge(a, b)
    assert len(m) == len(a) + len(b)
    assert np.all(np.diff(m.t) >= 0)
