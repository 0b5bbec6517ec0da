"""U-Net-like inverse-depth regressor and its training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .nn import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DepthNetConfig:
    input_channels: int = 5
    base_channels: int = 32
    depth_levels: int = 4
    image_size: int = 64
    kernel_size: int = 3
    head_kernel_size: int = 5
    dtype: str = "float64"

    def __post_init__(self):
        if self.input_channels < 1 or self.base_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.image_size % (2 ** self.depth_levels):
            raise ValueError(f"image_size must be divisible by 2**{self.depth_levels}")
        if self.kernel_size % 2 == 0 or self.head_kernel_size % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    def widths(self) -> list[int]:
        """Feature width at each resolution level 0..depth_levels."""
        return [self.base_channels * 2 ** level for level in range(self.depth_levels + 1)]

    def bottleneck_shape(self) -> tuple[int, int, int]:
        s = self.image_size // 2 ** self.depth_levels
        return self.widths()[-1], s, s


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    init_output_bias: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _layer_shapes(cfg: DepthNetConfig) -> dict[str, tuple[int, int, int]]:
    """name -> (out_channels, in_channels, kernel)."""
    w = cfg.widths()
    k = cfg.kernel_size
    shapes = {"head": (w[0], cfg.input_channels, cfg.head_kernel_size)}
    for level in range(1, cfg.depth_levels + 1):
        shapes[f"enc{level}"] = (w[level], w[level - 1], k)
    shapes["mid1"] = (w[-1], w[-1], k)
    shapes["mid2"] = (w[-1], w[-1], k)
    for level in range(cfg.depth_levels, 0, -1):
        shapes[f"dec{level}"] = (w[level - 1], w[level], k)
    shapes["out"] = (1, w[0], 1)
    return shapes


def init_params(cfg: DepthNetConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, (cout, cin, k) in _layer_shapes(cfg).items():
        bound = math.sqrt(1.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(cfg.dtype)
        params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=cfg.dtype), requires_grad=True,
                                     name=f"{name}.b")
    return params


class DepthNet:
    """Encoder (stride-2 convs) -> two middle convs -> decoder with additive skips."""

    def __init__(self, cfg: DepthNetConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        for name, (cout, cin, k) in _layer_shapes(cfg).items():
            if self.params[f"{name}.w"].shape != (cout, cin, k, k):
                raise ValueError(f"parameter {name}.w does not match the config")

    def _conv(self, name, x, stride=1, act=True):
        y = nn.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride)
        return nn.relu(y) if act else y

    def __call__(self, x, return_bottleneck=False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.cfg.dtype))
        if x.data.ndim == 3:
            x = Tensor(x.data[None])
        _, C, H, W = x.shape
        S = self.cfg.image_size
        if C != self.cfg.input_channels or H != S or W != S:
            raise ValueError(f"input shape {x.shape[1:]} does not match "
                             f"({self.cfg.input_channels}, {S}, {S})")
        skips = [self._conv("head", x)]
        for level in range(1, self.cfg.depth_levels + 1):
            skips.append(self._conv(f"enc{level}", skips[-1], stride=2))
        h = self._conv("mid2", self._conv("mid1", skips[-1]))
        bottleneck = h
        for level in range(self.cfg.depth_levels, 0, -1):
            h = self._conv(f"dec{level}", nn.upsample2x(h)) + skips[level - 1]
        out = self._conv("out", h, act=False)
        return (out, bottleneck) if return_bottleneck else out

    def predict(self, grid: np.ndarray) -> np.ndarray:
        """(C, S, S) or (N, C, S, S) voxel grids -> (S, S) or (N, S, S) inverse depth."""
        grid = np.asarray(grid)
        single = grid.ndim == 3
        out = self(grid[None] if single else grid).data[:, 0]
        return out[0] if single else out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    @classmethod
    def from_state(cls, cfg: DepthNetConfig, state: dict) -> "DepthNet":
        params = {k: Tensor(np.array(v, dtype=cfg.dtype), requires_grad=True, name=k)
                  for k, v in state.items()}
        return cls(cfg, params)

    def copy(self) -> "DepthNet":
        return DepthNet.from_state(self.cfg, self.state_dict())


def loss(pred, gt) -> float:
    """Mean squared error between two inverse-depth maps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.mean((gt - pred) ** 2))


def rotate_flip(a: np.ndarray, quarter_turns: int, flip: bool) -> np.ndarray:
    """Rotate the last two axes by 90 deg * quarter_turns, then optionally mirror."""
    if quarter_turns % 2 and a.shape[-1] != a.shape[-2]:
        raise ValueError("90/270 degree rotation needs square inputs")
    out = np.rot90(a, k=quarter_turns, axes=(-2, -1))
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(stack: np.ndarray, gt: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Same random axis-aligned rotation (+ optional flip) for stack and target."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    return rotate_flip(stack, k, flip), rotate_flip(gt, k, flip)


@dataclass
class TrainResult:
    net: DepthNet
    history: list[dict] = field(default_factory=list)   # epoch, split, loss
    step_losses: list[float] = field(default_factory=list)
    optimizer: nn.Adam | None = None


def _stack_arrays(dataset):
    X = np.stack([np.asarray(s.grid if hasattr(s, "grid") else s) for s, _ in dataset])
    Y = np.stack([np.asarray(g) for _, g in dataset])
    return X, Y


def evaluate_loss(net: DepthNet, dataset, batch_size: int = 8) -> float:
    X, Y = _stack_arrays(dataset)
    total = 0.0
    for i in range(0, len(X), batch_size):
        pred = net.predict(X[i:i + batch_size].astype(net.cfg.dtype))
        total += float(np.sum((pred - Y[i:i + batch_size]) ** 2))
    return total / Y.size


def fit(net: DepthNet, dataset, cfg: TrainConfig, val=None, callback=None) -> TrainResult:
    """Mini-batch Adam on the MSE objective, continuing from ``net``'s weights.

    A fresh optimizer state is created; the net is updated in place.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    X, Y = _stack_arrays(dataset)
    X = X.astype(net.cfg.dtype)
    Y = Y.astype(net.cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = nn.Adam(net.params, lr=cfg.lr)
    result = TrainResult(net, optimizer=opt)
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            if cfg.augment:
                pairs = [augment(x, y, rng) for x, y in zip(xb, yb)]
                xb = np.stack([p[0] for p in pairs])
                yb = np.stack([p[1] for p in pairs])
            opt.zero_grad()
            pred = net(xb)
            objective = nn.mse_loss(pred, yb[:, None])
            value = float(objective.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            objective.backward()
            opt.step()
            result.step_losses.append(value)
            epoch_loss += value * len(idx)
        result.history.append({"epoch": epoch, "split": "train", "loss": epoch_loss / n})
        if val:
            result.history.append({"epoch": epoch, "split": "val", "loss": evaluate_loss(net, val)})
        if callback is not None:
            callback(epoch, result)
        log.debug("epoch %d loss %.5f", epoch, epoch_loss / n)
    return result


def train(dataset, cfg: TrainConfig, net_cfg: DepthNetConfig, val=None, callback=None) -> TrainResult:
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    net = DepthNet(net_cfg, seed=cfg.seed)
    if cfg.init_output_bias:
        # start from the mean target so early steps fit structure, not offset
        mean = float(np.mean([np.mean(g) for _, g in dataset]))
        net.params["out.b"].data[:] = mean
    return fit(net, dataset, cfg, val=val, callback=callback)


def finetune(net: DepthNet, dataset, cfg: TrainConfig, val=None) -> TrainResult:
    """Continue training a copy of ``net`` on a new domain with fresh Adam state."""
    return fit(net.copy(), dataset, cfg, val=val)


def config_dict(cfg) -> dict:
    return asdict(cfg)
