"""Event focal stack: time-weighted voxel grid of a focal-sweep event stream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eventsim import EventStream

LAYOUTS = ("normal", "ppnn", "pnpn")
NORMALIZATIONS = ("none", "global", "per_bin")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StackConfig:
    bins: int = 5
    layout: str = "normal"
    normalize: str = "global"

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}")
        if self.normalize not in NORMALIZATIONS:
            raise ConfigError(f"normalize must be one of {NORMALIZATIONS}")

    @property
    def channels(self) -> int:
        return layout_channel_count(self.bins, self.layout)


@dataclass
class EventFocalStack:
    grid: np.ndarray        # (C, H, W)
    bins: int
    layout: str
    normalize: str
    scale: np.ndarray       # per-channel multiplier that was applied

    @property
    def channels(self) -> int:
        return self.grid.shape[0]


def layout_channel_count(B: int, layout: str) -> int:
    if B < 1:
        raise ConfigError("bins must be >= 1")
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}")
    return B if layout == "normal" else 2 * B


def _channel(b: np.ndarray, p: np.ndarray, B: int, layout: str) -> np.ndarray:
    if layout == "normal":
        return b
    neg = p < 0
    if layout == "ppnn":
        return b + B * neg
    return 2 * b + neg


def normalized_time(t: np.ndarray, B: int, t_range=None) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t_range is None:
        if t.size == 0:
            return t
        t0, t1 = t.min(), t.max()
    else:
        t0, t1 = t_range
    if t1 <= t0:
        return np.zeros_like(t)
    return (B - 1) * (t - t0) / (t1 - t0)


def voxelize(events: EventStream, B: int = 5, layout: str = "normal",
             normalize="global", t_range=None) -> EventFocalStack:
    """Accumulate polarities into ``B`` temporal bins with linear weights.

    ``normalize`` is one of "none", "global", "per_bin" (booleans map to
    "global"/"none"). ``t_range`` pins the (t_min, t_max) used for time
    normalization; by default the stream's own extremes.
    """
    if normalize is True:
        normalize = "global"
    elif normalize is False or normalize is None:
        normalize = "none"
    cfg = StackConfig(B, layout, normalize)
    C, H, W = cfg.channels, events.height, events.width
    flat = np.zeros(C * H * W)

    if len(events):
        ts = normalized_time(events.t, B, t_range)
        b0 = np.floor(ts).astype(np.int64)
        w1 = ts - b0
        w0 = 1.0 - w1
        p = events.p.astype(np.float64)
        signed = layout == "normal"

        if events.subpixel:
            x = np.asarray(events.x, dtype=np.float64)
            y = np.asarray(events.y, dtype=np.float64)
            x0 = np.floor(x).astype(np.int64)
            y0 = np.floor(y).astype(np.int64)
            fx, fy = x - x0, y - y0
            spatial = [(x0, y0, (1 - fx) * (1 - fy)), (x0 + 1, y0, fx * (1 - fy)),
                       (x0, y0 + 1, (1 - fx) * fy), (x0 + 1, y0 + 1, fx * fy)]
        else:
            spatial = [(events.x.astype(np.int64), events.y.astype(np.int64), 1.0)]

        idx_parts, val_parts = [], []
        for b, wt in ((b0, w0), (b0 + 1, w1)):
            tmask = (b < B) & (wt > 0)
            ch = _channel(b, p, B, layout)
            for xs, ys, ws in spatial:
                w = wt * ws
                m = tmask & (w > 0) & (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
                idx_parts.append((ch[m] * H + ys[m]) * W + xs[m])
                val_parts.append((w * p)[m] if signed else w[m])
        flat = np.bincount(np.concatenate(idx_parts), weights=np.concatenate(val_parts),
                           minlength=C * H * W).astype(np.float64)

    grid = flat.reshape(C, H, W)
    scale = np.ones(C)
    if normalize == "global":
        m = np.abs(grid).max()
        if m > 0:
            scale[:] = 1.0 / m
    elif normalize == "per_bin":
        m = np.abs(grid).reshape(C, -1).max(axis=1)
        scale = np.where(m > 0, 1.0 / np.where(m > 0, m, 1.0), 1.0)
    grid = grid * scale[:, None, None]
    return EventFocalStack(grid, B, layout, normalize, scale)
