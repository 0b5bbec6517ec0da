"""Lens-breathing homographies: estimation, synthesis and event warping."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .eventsim import EventStream


class EstimationError(ValueError):
    pass


def normalize_homography(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("homography must be 3x3")
    if abs(np.linalg.det(m)) <= 1e-12:
        raise ValueError("homography is not invertible")
    if m[2, 2] != 0:
        m = m / m[2, 2]
    return m


def apply_homography(m: np.ndarray, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    return (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    d = np.linalg.norm(pts - mean, axis=1).mean()
    if d == 0:
        raise EstimationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def _collinear(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[1] <= 1e-9 * max(sv[0], 1e-300)


def estimate_homography(src, dst) -> tuple[np.ndarray, float]:
    """Normalized DLT from ``src`` (frame k) to ``dst`` (reference frame).

    Returns the 3x3 matrix scaled to m[2, 2] = 1 and the reprojection RMS in
    pixels over the given pairs.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise EstimationError("correspondences must be two (n, 2) arrays")
    if len(src) < 4:
        raise EstimationError("need at least 4 correspondences")
    if _collinear(src) or _collinear(dst):
        raise EstimationError("degenerate configuration: points are collinear")

    T1 = _normalizing_transform(src)
    T2 = _normalizing_transform(dst)
    a = np.c_[src, np.ones(len(src))] @ T1.T
    b = np.c_[dst, np.ones(len(dst))] @ T2.T
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    zeros, ones = np.zeros_like(x), np.ones_like(x)
    A = np.empty((2 * len(x), 9))
    A[0::2] = np.stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u], axis=1)
    A[1::2] = np.stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v], axis=1)
    _, sv, vt = np.linalg.svd(A)
    if len(sv) >= 9 and sv[-2] <= 1e-12 * sv[0]:
        raise EstimationError("degenerate configuration: solution not unique")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(T2) @ Hn @ T1
    if abs(H[2, 2]) < 1e-15 or abs(np.linalg.det(H)) <= 1e-12 * abs(H[2, 2]) ** 3:
        raise EstimationError("estimated homography is singular")
    H = H / H[2, 2]
    px, py = apply_homography(H, src[:, 0], src[:, 1])
    rms = float(np.sqrt(np.mean((px - dst[:, 0]) ** 2 + (py - dst[:, 1]) ** 2)))
    return H, rms


@dataclass
class BreathingProfile:
    """Per-focus homographies keyed by sweep-time fraction.

    Each matrix maps reference-frame coordinates to where that point lands
    at the given focus setting; ``warp_events(..., "correct")`` applies the
    inverse.
    """

    fractions: np.ndarray      # (n,) strictly increasing in [0, 1]
    matrices: np.ndarray       # (n, 3, 3)
    reference_index: int = 0

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        self.matrices = np.asarray(self.matrices, dtype=np.float64).reshape(-1, 3, 3)
        if len(self.fractions) == 0 or len(self.fractions) != len(self.matrices):
            raise ValueError("profile needs matching, nonempty fractions and matrices")
        if np.any(np.diff(self.fractions) <= 0):
            raise ValueError("focus fractions must be strictly increasing")
        if np.any((self.fractions < 0) | (self.fractions > 1)):
            raise ValueError("focus fractions must lie in [0, 1]")
        for m in self.matrices:
            normalize_homography(m)
        if not np.allclose(self.matrices[self.reference_index], np.eye(3), atol=1e-12):
            raise ValueError("reference entry must be the identity")

    def __len__(self):
        return len(self.fractions)

    def nearest(self, frac: np.ndarray) -> np.ndarray:
        """Index of the temporally closest entry; ties go to the earlier one."""
        frac = np.asarray(frac, dtype=np.float64)
        hi = np.clip(np.searchsorted(self.fractions, frac, side="left"), 0, len(self) - 1)
        lo = np.clip(hi - 1, 0, len(self) - 1)
        d_lo = np.abs(frac - self.fractions[lo])
        d_hi = np.abs(self.fractions[hi] - frac)
        return np.where(d_lo <= d_hi, lo, hi)

    def to_json(self) -> dict:
        return {"fractions": self.fractions.tolist(),
                "matrices": [m.reshape(-1).tolist() for m in self.matrices],
                "reference_index": int(self.reference_index)}

    @classmethod
    def from_json(cls, doc: dict) -> "BreathingProfile":
        return cls(np.array(doc["fractions"]),
                   np.array(doc["matrices"], dtype=np.float64).reshape(-1, 3, 3),
                   int(doc.get("reference_index", 0)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "BreathingProfile":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def scale_about(s: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[s, 0, cx * (1 - s)], [0, s, cy * (1 - s)], [0, 0, 1.0]])


def synth_breathing_profile(max_scale: float, n_entries: int, W: int, H: int) -> BreathingProfile:
    if max_scale < 1:
        raise ValueError("max_scale must be >= 1")
    if n_entries < 2:
        raise ValueError("n_entries must be >= 2")
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    fractions = np.linspace(0.0, 1.0, n_entries)
    scales = np.linspace(1.0, max_scale, n_entries)
    mats = np.stack([scale_about(s, cx, cy) for s in scales])
    mats[0] = np.eye(3)
    return BreathingProfile(fractions, mats, 0)


def warp_events(events: EventStream, profile: BreathingProfile,
                direction: str = "correct") -> EventStream:
    """Map each event through its temporally closest homography.

    ``inject`` applies the profile matrix, ``correct`` its inverse. Events
    landing outside [0, W-1] x [0, H-1] are dropped.
    """
    if direction not in ("inject", "correct"):
        raise ValueError("direction must be 'inject' or 'correct'")
    eye = np.eye(3)
    if all(np.array_equal(m, eye) for m in profile.matrices):
        return events.take(slice(None))
    mats = profile.matrices if direction == "inject" else np.linalg.inv(profile.matrices)
    which = profile.nearest(events.t / events.duration)
    x = np.asarray(events.x, dtype=np.float64).copy()
    y = np.asarray(events.y, dtype=np.float64).copy()
    for i in np.unique(which):
        if np.array_equal(profile.matrices[i], eye):
            continue
        sel = which == i
        x[sel], y[sel] = apply_homography(mats[i], x[sel], y[sel])
    keep = (x >= 0) & (x <= events.width - 1) & (y >= 0) & (y <= events.height - 1)
    return EventStream(x[keep], y[keep], events.t[keep], events.p[keep],
                       events.width, events.height, events.duration)


def correspondences_for(m: np.ndarray, W: int, H: int, n_side: int = 6,
                        noise_px: float = 0.0, seed: int = 0):
    """Grid of board points seen through ``m`` (observed, reference) pairs.

    Observed points are the reference grid mapped through the breathing
    matrix; ``estimate_homography(observed, reference)`` then estimates the
    correcting map.
    """
    gx, gy = np.meshgrid(np.linspace(0.1 * (W - 1), 0.9 * (W - 1), n_side),
                         np.linspace(0.1 * (H - 1), 0.9 * (H - 1), n_side))
    ref = np.c_[gx.ravel(), gy.ravel()]
    ox, oy = apply_homography(m, ref[:, 0], ref[:, 1])
    obs = np.c_[ox, oy]
    if noise_px > 0:
        obs = obs + np.random.default_rng(seed).normal(0.0, noise_px, size=obs.shape)
    return obs, ref


def profile_from_correspondences(fractions, pairs, reference_index: int = 0) -> BreathingProfile:
    """Build a profile from per-entry (observed, reference) point sets."""
    mats = []
    for i, (obs, ref) in enumerate(pairs):
        if i == reference_index:
            mats.append(np.eye(3))
            continue
        correcting, _ = estimate_homography(obs, ref)
        mats.append(np.linalg.inv(correcting))
    mats = np.stack(mats)
    mats /= mats[:, 2:3, 2:3]
    return BreathingProfile(np.asarray(fractions), mats, reference_index)
