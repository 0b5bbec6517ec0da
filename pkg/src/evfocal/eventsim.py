"""ESIM-style threshold-crossing event simulation over a focal sweep."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenegen import FocalStack

SWEEP_DURATION_NS = 1e9


@dataclass(frozen=True)
class SimConfig:
    contrast_threshold: float = 0.08
    log_eps: float = 1e-3
    noise_rate: float = 0.0          # spurious events per pixel per sweep
    threshold_jitter: float = 0.0    # std of the multiplicative per-pixel threshold error

    def __post_init__(self):
        if self.contrast_threshold <= 0:
            raise ValueError("contrast_threshold must be positive")
        if self.log_eps <= 0:
            raise ValueError("log_eps must be positive")
        if self.noise_rate < 0 or self.threshold_jitter < 0:
            raise ValueError("noise_rate and threshold_jitter must be non-negative")


@dataclass
class EventStream:
    """Struct-of-arrays event container, sorted by timestamp.

    ``x``/``y`` are integer pixel indices straight out of the simulator and
    become float sub-pixel coordinates after a homography warp.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray       # float64 nanoseconds
    p: np.ndarray       # int8, +1 / -1
    width: int
    height: int
    duration: float = SWEEP_DURATION_NS

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, width, height, duration=SWEEP_DURATION_NS):
        return cls(np.zeros(0, np.int32), np.zeros(0, np.int32), np.zeros(0),
                   np.zeros(0, np.int8), width, height, duration)

    def take(self, idx) -> "EventStream":
        return EventStream(self.x[idx], self.y[idx], self.t[idx], self.p[idx],
                           self.width, self.height, self.duration)

    @property
    def subpixel(self) -> bool:
        return not np.issubdtype(self.x.dtype, np.integer)


def merge(*streams: EventStream) -> EventStream:
    """Stable time-ordered merge; ties keep argument order."""
    first = streams[0]
    subpixel = any(s.subpixel for s in streams)
    cast = np.float64 if subpixel else np.int32
    x = np.concatenate([s.x.astype(cast) for s in streams])
    y = np.concatenate([s.y.astype(cast) for s in streams])
    t = np.concatenate([s.t for s in streams])
    p = np.concatenate([s.p for s in streams]).astype(np.int8)
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], first.width,
                       first.height, first.duration)


def pixel_thresholds(cfg: SimConfig, shape: tuple[int, int], seed: int) -> np.ndarray:
    H, W = shape
    C = np.full(H * W, cfg.contrast_threshold)
    if cfg.threshold_jitter > 0:
        rng = np.random.default_rng([seed, 1])
        eps = rng.normal(0.0, cfg.threshold_jitter, size=H * W)
        C *= np.maximum(1.0 + eps, 0.05)
    return C.reshape(H, W)


def simulate_log(L: np.ndarray, C, duration: float = SWEEP_DURATION_NS) -> EventStream:
    """Threshold crossings of per-pixel log-intensity traces ``L`` of shape (K, H, W).

    Frames are uniformly spaced over ``duration``; ``C`` is a scalar or an
    (H, W) map of thresholds. Noise-free.
    """
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 3 or L.shape[0] < 2:
        raise ValueError("need at least two frames of shape (K, H, W)")
    K, H, W = L.shape
    Lf = L.reshape(K, -1)
    Cp = np.broadcast_to(np.asarray(C, dtype=np.float64), (H, W)).reshape(-1)
    dt = duration / (K - 1)

    ref_count = np.zeros(Lf.shape[1], dtype=np.int64)   # reference = L0 + count * C
    L0 = Lf[0]
    pix_parts, t_parts, p_parts = [], [], []
    for k in range(K - 1):
        a, b = Lf[k], Lf[k + 1]
        ref = L0 + ref_count * Cp
        up = np.floor((b - ref) / Cp).astype(np.int64)
        down = np.floor((ref - b) / Cp).astype(np.int64)
        n = np.where(b > a, np.maximum(up, 0), np.where(b < a, np.maximum(down, 0), 0))
        idx = np.flatnonzero(n)
        if idx.size:
            reps = n[idx]
            pix = np.repeat(idx, reps)
            # j = 1..n within each pixel's run
            starts = np.cumsum(reps) - reps
            j = np.arange(pix.size) - np.repeat(starts, reps) + 1
            sign = np.where(b[pix] > a[pix], 1, -1)
            level = ref[pix] + sign * j * Cp[pix]
            frac = (level - a[pix]) / (b[pix] - a[pix])
            pix_parts.append(pix)
            t_parts.append((k + frac) * dt)
            p_parts.append(sign.astype(np.int8))
            ref_count[idx] += np.where(b[idx] > a[idx], reps, -reps)

    if not pix_parts:
        return EventStream.empty(W, H, duration)
    pix = np.concatenate(pix_parts)
    t = np.concatenate(t_parts)
    p = np.concatenate(p_parts)
    order = np.lexsort((pix, t))
    pix, t, p = pix[order], t[order], p[order]
    return EventStream((pix % W).astype(np.int32), (pix // W).astype(np.int32), t, p,
                       W, H, duration)


def noise_events(cfg: SimConfig, shape: tuple[int, int], seed: int,
                 duration: float = SWEEP_DURATION_NS) -> EventStream:
    H, W = shape
    rng = np.random.default_rng([seed, 2])
    n = rng.poisson(cfg.noise_rate * W * H)
    t = rng.uniform(0.0, duration, size=n)
    x = rng.integers(0, W, size=n).astype(np.int32)
    y = rng.integers(0, H, size=n).astype(np.int32)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], W, H, duration)


def simulate(stack: FocalStack, cfg: SimConfig = SimConfig(), seed: int = 0,
             duration: float = SWEEP_DURATION_NS) -> EventStream:
    frames = np.asarray(stack.frames)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("focal stack must contain at least two frames")
    L = np.log(frames + cfg.log_eps)
    C = pixel_thresholds(cfg, frames.shape[1:], seed)
    events = simulate_log(L, C, duration)
    if cfg.noise_rate > 0:
        events = merge(events, noise_events(cfg, frames.shape[1:], seed, duration))
    return events


def reconstruct_log_intensity(events: EventStream, L0: np.ndarray, C,
                              times: np.ndarray) -> np.ndarray:
    """Reference level implied by the events at each query time.

    Returns an array of shape (len(times), H, W); an event at time t counts
    for every query time >= t.
    """
    L0 = np.asarray(L0, dtype=np.float64)
    H, W = L0.shape
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), (H, W))
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    out = np.empty((times.size, H, W))
    if len(events) == 0:
        out[:] = L0
        return out
    pix = np.asarray(events.y, dtype=np.int64) * W + np.asarray(events.x, dtype=np.int64)
    order = np.argsort(events.t, kind="stable")
    t_sorted = events.t[order]
    cum = np.zeros(H * W)
    done = 0
    for i in np.argsort(times, kind="stable"):
        upto = np.searchsorted(t_sorted, times[i], side="right")
        sel = order[done:upto]
        cum += np.bincount(pix[sel], weights=events.p[sel].astype(np.float64), minlength=H * W)
        done = upto
        out[i] = L0 + cum.reshape(H, W) * C
    return out
