"""Binary artifact formats: F32R rasters, EVFS events, EFS1 voxel grids, PPM previews."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .eventsim import SWEEP_DURATION_NS, EventStream
from .scenegen import FocalStack
from .stack import LAYOUTS, NORMALIZATIONS, EventFocalStack


class FormatError(ValueError):
    pass


def _check_magic(buf: bytes, magic: bytes, path):
    if buf[:4] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header")


# --- F32R rasters ----------------------------------------------------------

def write_raster(path, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("raster must be 2-D (H, W)")
    H, W = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"F32R" + struct.pack("<HH", W, H))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    _check_magic(buf, b"F32R", path)
    W, H = struct.unpack_from("<HH", buf, 4)
    if len(buf) != 8 + 4 * W * H:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(buf, dtype="<f4", offset=8).reshape(H, W).astype(np.float64)


# --- EVFS events -----------------------------------------------------------

EVENT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "i1"), ("pad", "i1")])


def write_events(path, events: EventStream, meta: dict | None = None):
    """Sub-pixel coordinates are rounded to the nearest pixel (the record is integral)."""
    rec = np.zeros(len(events), dtype=EVENT_RECORD)
    rec["x"] = np.clip(np.rint(events.x), 0, events.width - 1)
    rec["y"] = np.clip(np.rint(events.y), 0, events.height - 1)
    rec["t"] = np.rint(events.t).astype(np.int64)
    rec["p"] = events.p
    with open(path, "wb") as fh:
        fh.write(b"EVFS" + struct.pack("<IHHQ", 1, events.width, events.height, len(events)))
        fh.write(rec.tobytes())
    side = dict(meta or {})
    side.setdefault("duration_ns", events.duration)
    with open(_sidecar(path), "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)


def _sidecar(path) -> str:
    return os.fspath(path) + ".meta.json"


def read_events(path) -> EventStream:
    with open(path, "rb") as fh:
        buf = fh.read()
    _check_magic(buf, b"EVFS", path)
    version, W, H, count = struct.unpack_from("<IHHQ", buf, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported EVFS version {version}")
    header = 4 + struct.calcsize("<IHHQ")
    if len(buf) != header + count * EVENT_RECORD.itemsize:
        raise FormatError(f"{path}: event count does not match file size")
    rec = np.frombuffer(buf, dtype=EVENT_RECORD, count=count, offset=header)
    duration = SWEEP_DURATION_NS
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            duration = float(json.load(fh).get("duration_ns", duration))
    if count and np.any(np.diff(rec["t"]) < 0):
        raise FormatError(f"{path}: timestamps are not sorted")
    if count and np.any((rec["p"] != 1) & (rec["p"] != -1)):
        raise FormatError(f"{path}: polarity must be +1 or -1")
    return EventStream(rec["x"].astype(np.int32), rec["y"].astype(np.int32),
                       rec["t"].astype(np.float64), rec["p"].astype(np.int8), W, H, duration)


# --- EFS1 voxel grids ------------------------------------------------------

def write_voxels(path, vox: EventFocalStack):
    C, H, W = vox.grid.shape
    with open(path, "wb") as fh:
        fh.write(b"EFS1" + struct.pack("<HHHBB", W, H, C, LAYOUTS.index(vox.layout),
                                       NORMALIZATIONS.index(vox.normalize)))
        fh.write(np.ascontiguousarray(vox.grid, dtype="<f4").tobytes())


def read_voxels(path) -> EventFocalStack:
    with open(path, "rb") as fh:
        buf = fh.read()
    _check_magic(buf, b"EFS1", path)
    W, H, C, layout, norm = struct.unpack_from("<HHHBB", buf, 4)
    if layout >= len(LAYOUTS) or norm >= len(NORMALIZATIONS):
        raise FormatError(f"{path}: bad layout or normalization code")
    if len(buf) != 12 + 4 * C * H * W:
        raise FormatError(f"{path}: truncated voxel grid")
    grid = np.frombuffer(buf, dtype="<f4", offset=12).reshape(C, H, W).astype(np.float64)
    layout_name = LAYOUTS[layout]
    bins = C if layout_name == "normal" else C // 2
    return EventFocalStack(grid, bins, layout_name, NORMALIZATIONS[norm], np.ones(C))


# --- focal stack directories -----------------------------------------------

def save_focal_stack(directory, stack: FocalStack, meta: dict | None = None):
    os.makedirs(directory, exist_ok=True)
    doc = dict(stack.meta)
    doc.update(meta or {})
    doc["focus_distances"] = [float(f) for f in stack.focus_distances]
    doc["frames"] = [f"frame_{k:04d}.f32r" for k in range(len(stack.frames))]
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    for name, frame in zip(doc["frames"], stack.frames):
        write_raster(os.path.join(directory, name), frame)
    write_raster(os.path.join(directory, "gt_invdepth.f32r"), stack.gt_inverse_depth)


def load_focal_stack(directory) -> FocalStack:
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    frames = np.stack([read_raster(os.path.join(directory, n)) for n in meta["frames"]])
    inv = read_raster(os.path.join(directory, "gt_invdepth.f32r"))
    return FocalStack(frames, np.array(meta["focus_distances"]), 1.0 / inv, meta)


# --- PPM previews ----------------------------------------------------------

def colormap(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Blue (low) -> green -> red (high), uint8 RGB."""
    span = vmax - vmin if vmax > vmin else 1.0
    u = np.clip((np.asarray(values, dtype=np.float64) - vmin) / span, 0.0, 1.0)
    r = np.clip(2 * u - 1, 0, 1)
    b = np.clip(1 - 2 * u, 0, 1)
    g = 1 - r - b
    return (np.stack([r, g, b], axis=-1) * 255 + 0.5).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb, dtype=np.uint8)
    H, W, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode())
        fh.write(rgb.tobytes())
