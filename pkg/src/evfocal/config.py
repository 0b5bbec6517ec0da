"""Run configuration: one JSON document, dotted-path overrides, fingerprints."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .depthnet import DepthNetConfig, TrainConfig
from .eventsim import SimConfig
from .scenegen import CameraParams
from .stack import StackConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SceneConfig:
    n_layers: int = 3
    depth_range: tuple[float, float] = (0.25, 1.9)
    sweep: tuple[float, float] = (0.2, 2.0)
    focus_steps: int = 64


@dataclass(frozen=True)
class ProxyConfig:
    """The synthetic stand-in for real captures."""
    noise_rate: float = 0.5
    threshold_jitter: float = 0.1
    breathing_max_scale: float = 1.03
    breathing_entries: int = 16
    correct: bool = True
    calibration: str = "exact"     # "exact" profile or "estimated" from noisy board points
    calib_noise_px: float = 0.2


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    n_train: int = 64
    n_val: int = 8
    n_test: int = 8
    n_finetune: int = 16


@dataclass(frozen=True)
class RunConfig:
    camera: CameraParams = field(default_factory=CameraParams.desk)
    scene: SceneConfig = field(default_factory=SceneConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    stack: StackConfig = field(default_factory=StackConfig)
    net: DepthNetConfig = field(default_factory=DepthNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def replace(self, **overrides) -> "RunConfig":
        """Dotted-path overrides, e.g. ``cfg.replace(**{"stack.bins": 1})``."""
        doc = self.to_dict()
        for key, value in overrides.items():
            set_dotted(doc, key, value)
        return from_dict(doc)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def set_dotted(doc: dict, key: str, value):
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(key, "unknown section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = value


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(prefix, "expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in doc:
        if k not in names:
            raise ConfigError(f"{prefix}.{k}", "unknown key")
    kwargs = {}
    for k, v in doc.items():
        ftype = names[k].type
        if isinstance(v, list):
            v = tuple(v)
        if "float" in str(ftype) and "tuple" not in str(ftype) and isinstance(v, int) \
                and not isinstance(v, bool):
            v = float(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from exc


_SECTIONS = {"camera": CameraParams, "scene": SceneConfig, "sim": SimConfig,
             "proxy": ProxyConfig, "stack": StackConfig, "net": DepthNetConfig,
             "train": TrainConfig, "finetune": TrainConfig, "dataset": DatasetConfig}


def from_dict(doc: dict) -> RunConfig:
    doc = copy.deepcopy(doc)
    base = RunConfig().to_dict()
    for k in doc:
        if k not in base:
            raise ConfigError(k, "unknown key")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = dict(base[name])
        section.update(doc.get(name, {}))
        kwargs[name] = _build(cls, section, name)
    kwargs["seeds"] = tuple(doc.get("seeds", base["seeds"]))
    kwargs["output_dir"] = doc.get("output_dir", base["output_dir"])
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.net.input_channels != cfg.stack.channels:
        raise ConfigError("net.input_channels",
                          f"{cfg.net.input_channels} != {cfg.stack.channels} channels of the "
                          f"{cfg.stack.layout} layout with {cfg.stack.bins} bins")
    if cfg.camera.resolution_w != cfg.net.image_size or cfg.camera.resolution_h != cfg.net.image_size:
        raise ConfigError("net.image_size", "must equal the camera resolution")
    near, far = cfg.scene.sweep
    lo, hi = cfg.scene.depth_range
    if not near < lo < hi < far:
        raise ConfigError("scene.depth_range", "must lie strictly inside the sweep")
    if cfg.scene.focus_steps < 2:
        raise ConfigError("scene.focus_steps", "need at least 2 focus steps")
    if cfg.scene.n_layers < 1:
        raise ConfigError("scene.n_layers", "must be >= 1")
    if cfg.proxy.calibration not in ("exact", "estimated"):
        raise ConfigError("proxy.calibration", "must be 'exact' or 'estimated'")
    if cfg.proxy.breathing_max_scale < 1 or cfg.proxy.breathing_entries < 2:
        raise ConfigError("proxy", "breathing needs max_scale >= 1 and >= 2 entries")
    if len(cfg.seeds) < 1:
        raise ConfigError("seeds", "need at least one seed")
    d = cfg.dataset
    if min(d.n_train, d.n_val, d.n_test, d.n_finetune) < 0 or d.n_train < 1:
        raise ConfigError("dataset", "split sizes must be non-negative and n_train >= 1")


def with_stack(cfg: RunConfig, **stack_overrides) -> RunConfig:
    """Change the voxel-grid config and keep the network input width consistent."""
    stack = dataclasses.replace(cfg.stack, **stack_overrides)
    net = dataclasses.replace(cfg.net, input_channels=stack.channels)
    return dataclasses.replace(cfg, stack=stack, net=net)


def load(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (``None`` means all defaults) and apply dotted overrides."""
    if path is None:
        doc = {}
    else:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    for key, value in (overrides or {}).items():
        base = RunConfig().to_dict()
        set_dotted(base, key, value)     # validates the path
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return from_dict(doc)


def fingerprint(*sections) -> str:
    """Short stable hash over config sections (dataclasses or plain dicts)."""
    payload = [dataclasses.asdict(s) if dataclasses.is_dataclass(s) else s for s in sections]
    blob = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dataset_fingerprint(cfg: RunConfig) -> str:
    return fingerprint(cfg.camera, cfg.scene, cfg.sim, cfg.proxy, cfg.stack, cfg.dataset)


def model_fingerprint(cfg: RunConfig) -> str:
    return fingerprint(cfg.sim, cfg.stack, cfg.net, cfg.train)
