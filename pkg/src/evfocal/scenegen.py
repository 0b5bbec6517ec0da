"""Procedural layered-plane scenes and thin-lens focal-stack rendering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

TEXTURE_KINDS = ("checker", "stripes", "value-noise")


@dataclass(frozen=True)
class CameraParams:
    focal_length: float = 0.016
    f_number: float = 2.3
    sensor_width: float = 0.0064
    sensor_height: float = 0.00481
    resolution_w: int = 346
    resolution_h: int = 260

    def __post_init__(self):
        if self.focal_length <= 0 or self.f_number <= 0:
            raise ValueError("focal_length and f_number must be positive")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if self.resolution_w < 1 or self.resolution_h < 1:
            raise ValueError("resolution must be at least 1x1")

    @property
    def aperture(self) -> float:
        return self.focal_length / self.f_number

    @property
    def pixels_per_meter(self) -> float:
        return self.resolution_w / self.sensor_width

    @classmethod
    def desk(cls, size: int = 64, pixel_pitch: float = 2.5e-5) -> "CameraParams":
        """Central ``size`` x ``size`` window of a 256 px render of the 6.4 mm sensor.

        Keeps the optics and pixel pitch of the full-size camera so blur in
        pixels matches the full-resolution render; only the field of view shrinks.
        """
        return cls(sensor_width=size * pixel_pitch, sensor_height=size * pixel_pitch,
                   resolution_w=size, resolution_h=size)


@dataclass(frozen=True)
class Texture:
    kind: str
    seed: int = 0
    scale: float = 6.0      # cell size / period / lattice spacing, pixels
    angle: float = 0.0      # radians, stripes only
    phase_x: float = 0.0
    phase_y: float = 0.0
    lo: float = 0.2
    hi: float = 0.8

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")

    def evaluate(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Luminance at pixel-centre coordinates (broadcasting)."""
        x = xs + self.phase_x
        y = ys + self.phase_y
        if self.kind == "checker":
            v = (np.floor(x / self.scale) + np.floor(y / self.scale)) % 2
        elif self.kind == "stripes":
            u = x * np.cos(self.angle) + y * np.sin(self.angle)
            v = np.floor(u / (0.5 * self.scale)) % 2
        else:
            v = _value_noise(x / self.scale, y / self.scale, self.seed)
            # posterized so every layer carries hard luminance edges
            v = np.floor(v * 4.0).clip(0, 3) / 3.0
        return self.lo + (self.hi - self.lo) * v


def _lattice_hash(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    # splitmix64-style integer hash -> uniform [0, 1)
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x165667B19E3779F9))
        h ^= h >> np.uint64(30)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(27)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    iu = np.floor(u)
    iv = np.floor(v)
    fu = u - iu
    fv = v - iv
    fu = fu * fu * (3 - 2 * fu)
    fv = fv * fv * (3 - 2 * fv)
    # shift keeps lattice indices non-negative for the uint64 hash
    iu = iu.astype(np.int64) + (1 << 20)
    iv = iv.astype(np.int64) + (1 << 20)
    c00 = _lattice_hash(iu, iv, seed)
    c10 = _lattice_hash(iu + 1, iv, seed)
    c01 = _lattice_hash(iu, iv + 1, seed)
    c11 = _lattice_hash(iu + 1, iv + 1, seed)
    top = c00 + (c10 - c00) * fu
    bottom = c01 + (c11 - c01) * fu
    return top + (bottom - top) * fv


@dataclass(frozen=True)
class Layer:
    depth: float
    rect: tuple[int, int, int, int]  # x0, y0, x1, y1 (half-open, pixels)
    texture: Texture


@dataclass(frozen=True)
class SceneSpec:
    layers: tuple[Layer, ...]
    background_depth: float
    background_texture: Texture
    seed: int = 0

    def validate(self, cam: CameraParams, sweep: tuple[float, float] = (0.2, 2.0)):
        near, far = sweep
        depths = [layer.depth for layer in self.layers] + [self.background_depth]
        if any(not (near < d < far) for d in depths):
            raise ValueError("scene depths must lie strictly inside the sweep range")
        if any(a.depth > b.depth for a, b in zip(self.layers, self.layers[1:])):
            raise ValueError("layers must be sorted near to far")
        for layer in self.layers:
            x0, y0, x1, y1 = layer.rect
            if not (0 <= x0 < x1 <= cam.resolution_w and 0 <= y0 < y1 <= cam.resolution_h):
                raise ValueError(f"layer rectangle {layer.rect} outside the image")


@dataclass
class FocalStack:
    frames: np.ndarray            # (K, H, W) in [0, 1]
    focus_distances: np.ndarray   # (K,) meters, strictly increasing
    gt_depth: np.ndarray          # (H, W) meters
    meta: dict = field(default_factory=dict)

    @property
    def gt_inverse_depth(self) -> np.ndarray:
        return 1.0 / self.gt_depth

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def coc_diameter(cam: CameraParams, object_depth, focus_distance):
    """Thin-lens circle-of-confusion diameter in pixels.

    Accepts scalars or broadcastable arrays.
    """
    d = np.asarray(object_depth, dtype=np.float64)
    s = np.asarray(focus_distance, dtype=np.float64)
    if np.any(d <= 0) or np.any(s <= 0):
        raise ValueError("depths must be positive")
    f = cam.focal_length
    if np.any(d <= f) or np.any(s <= f):
        raise ValueError("depths must exceed the focal length")
    c = cam.aperture * f * np.abs(d - s) / (d * (s - f))
    c = c * cam.pixels_per_meter
    return float(c) if c.ndim == 0 else c


def generate_scene(seed: int, cam: CameraParams, n_layers: int = 3,
                   depth_range: tuple[float, float] = (0.25, 1.9),
                   size_range: tuple[float, float] = (0.25, 0.6)) -> SceneSpec:
    """Random fronto-parallel textured rectangles in front of a textured background."""
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    rng = np.random.default_rng(seed)
    W, H = cam.resolution_w, cam.resolution_h
    # background is the farthest of n_layers + 1 iid depths
    depths = np.sort(rng.uniform(depth_range[0], depth_range[1], size=n_layers + 1))

    def texture(sub_seed):
        kind = TEXTURE_KINDS[rng.integers(len(TEXTURE_KINDS))]
        lo = rng.uniform(0.05, 0.35)
        hi = rng.uniform(0.6, 0.95)
        return Texture(kind=kind, seed=int(sub_seed), scale=float(rng.uniform(3.0, 10.0)),
                       angle=float(rng.uniform(0, np.pi)), phase_x=float(rng.uniform(0, 20)),
                       phase_y=float(rng.uniform(0, 20)), lo=float(lo), hi=float(hi))

    layers = []
    for i in range(n_layers):
        w = max(2, int(round(rng.uniform(*size_range) * W)))
        h = max(2, int(round(rng.uniform(*size_range) * H)))
        x0 = int(rng.integers(0, W - w + 1))
        y0 = int(rng.integers(0, H - h + 1))
        layers.append(Layer(float(depths[i]), (x0, y0, x0 + w, y0 + h),
                            texture(rng.integers(1 << 31))))
    bg = texture(rng.integers(1 << 31))
    return SceneSpec(tuple(layers), float(depths[-1]), bg, seed=seed)


def disc_kernel(diameter: float) -> np.ndarray:
    """Normalized anti-aliased disc; identity below one pixel."""
    if diameter < 1.0:
        return np.ones((1, 1))
    r = 0.5 * diameter
    n = int(np.ceil(r))
    ax = np.arange(-n, n + 1)
    dist = np.hypot(ax[:, None], ax[None, :])
    k = np.clip(r + 0.5 - dist, 0.0, 1.0)
    return k / k.sum()


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.shape == (1, 1):
        return img
    return fftconvolve(img, kernel, mode="same")


def render_depth(scene: SceneSpec, cam: CameraParams) -> np.ndarray:
    depth = np.full((cam.resolution_h, cam.resolution_w), scene.background_depth)
    for layer in reversed(scene.layers):
        x0, y0, x1, y1 = layer.rect
        depth[y0:y1, x0:x1] = layer.depth
    return depth


def render_all_in_focus(scene: SceneSpec, cam: CameraParams) -> np.ndarray:
    ys, xs = np.mgrid[0:cam.resolution_h, 0:cam.resolution_w].astype(np.float64)
    img = scene.background_texture.evaluate(xs, ys)
    for layer in reversed(scene.layers):
        x0, y0, x1, y1 = layer.rect
        img[y0:y1, x0:x1] = layer.texture.evaluate(xs, ys)[y0:y1, x0:x1]
    return np.clip(img, 0.0, 1.0)


def render_focal_stack(scene: SceneSpec, cam: CameraParams, K: int = 64,
                       sweep: tuple[float, float] = (0.2, 2.0)) -> FocalStack:
    near, far = sweep
    if K < 2:
        raise ValueError("a focal stack needs K >= 2 frames")
    if not near < far:
        raise ValueError("sweep near must be < far")
    focus = np.linspace(near, far, K)
    W, H = cam.resolution_w, cam.resolution_h

    all_depths = np.array([layer.depth for layer in scene.layers] + [scene.background_depth])
    coc = coc_diameter(cam, all_depths[None, :], focus[:, None])  # (K, n_layers + 1)
    pad = int(np.ceil(coc.max() / 2)) + 2
    ys, xs = np.mgrid[-pad:H + pad, -pad:W + pad].astype(np.float64)

    bg = scene.background_texture.evaluate(xs, ys)
    planes = []
    for layer in scene.layers:
        x0, y0, x1, y1 = layer.rect
        mask = np.zeros_like(xs)
        mask[y0 + pad:y1 + pad, x0 + pad:x1 + pad] = 1.0
        planes.append((mask, layer.texture.evaluate(xs, ys) * mask))

    kernels: dict[float, np.ndarray] = {}

    def kern(c):
        if c not in kernels:
            kernels[c] = disc_kernel(c)
        return kernels[c]

    frames = np.empty((K, H, W))
    n = len(scene.layers)
    for k in range(K):
        frame = _blur(bg, kern(coc[k, n]))
        for i in reversed(range(n)):
            mask, tex = planes[i]
            kk = kern(coc[k, i])
            alpha = _blur(mask, kk)
            frame = frame * (1.0 - alpha) + _blur(tex, kk)
        frames[k] = frame[pad:pad + H, pad:pad + W]
    np.clip(frames, 0.0, 1.0, out=frames)

    meta = {"seed": scene.seed, "sweep": [near, far], "K": K}
    return FocalStack(frames, focus, render_depth(scene, cam), meta)
