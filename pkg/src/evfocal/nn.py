"""Small reverse-mode autodiff over numpy: exactly what the depth network needs.

Tensors are NCHW. Convolutions use im2col with columns laid out as
(Cin*k*k, B*Ho*Wo) so forward and both backward products are single GEMMs.
"""

from __future__ import annotations

import json
import struct

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _grad_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._grad_fn = _grad_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode accumulation into ``.grad`` of every leaf requiring grad."""
        if self._grad_fn is None:
            raise RuntimeError("backward() called on a tensor with no recorded forward pass")
        if self.data.size != 1:
            raise RuntimeError("backward() needs a scalar loss")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent._grad_fn is not None or parent.requires_grad:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None:
                    continue
                if parent._grad_fn is None and not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _tracked(*ts):
    return any(t.requires_grad or t._grad_fn is not None for t in ts)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data
    if not _tracked(a, b):
        return Tensor(out)
    return Tensor(out, _parents=(a, b), _grad_fn=lambda g: (g, g))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = x.data * mask
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=(x,), _grad_fn=lambda g: (g * mask,))


def upsample2x(x) -> Tensor:
    """Nearest-neighbour x2 upsampling of the two spatial axes."""
    x = _as_tensor(x)
    B, C, H, W = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (B, C, H, 2, W, 2)).reshape(B, C, 2 * H, 2 * W)
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=(x,),
                  _grad_fn=lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum())
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=(x,), _grad_fn=lambda g: (np.full_like(x.data, g),))


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over every element."""
    pred = _as_tensor(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target
    out = np.asarray(np.mean(diff * diff))
    if not _tracked(pred):
        return Tensor(out)
    scale = 2.0 / diff.size
    return Tensor(out, _parents=(pred,), _grad_fn=lambda g: (g * scale * diff,))


def conv_output_size(n: int, stride: int) -> int:
    return -(-n // stride)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Same-padded cross-correlation, odd square kernel, stride 1 or 2."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects input (B, Cin, H, W) and kernel (Cout, Cin, k, k)")
    B, Cin, H, W = x.shape
    Cout, Cin_w, k, k2 = weight.shape
    if Cin != Cin_w:
        raise ValueError(f"conv2d: input has {Cin} channels, kernel expects {Cin_w}")
    if k != k2 or k % 2 == 0:
        raise ValueError("conv2d: kernel must be square with odd size")
    if stride not in (1, 2):
        raise ValueError("conv2d: stride must be 1 or 2")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (Cout,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({Cout},)")

    pad = (k - 1) // 2
    Ho, Wo = conv_output_size(H, stride), conv_output_size(W, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((Cin, k, k, B, Ho, Wo), dtype=np.result_type(x.data, weight.data))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride].transpose(1, 0, 2, 3)
    cols = cols.reshape(Cin * k * k, B * Ho * Wo)
    w2 = weight.data.reshape(Cout, Cin * k * k)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(Cout, B, Ho, Wo).transpose(1, 0, 2, 3)

    parents = (x, weight) if bias is None else (x, weight, bias)
    if not _tracked(*parents):
        return Tensor(out)
    need_dx = _tracked(x)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(Cout, B * Ho * Wo)
        dw = (g2 @ cols.T).reshape(weight.shape)
        dx = None
        if need_dx:
            dcols = (w2.T @ g2).reshape(Cin, k, k, B, Ho, Wo)
            dxp = np.zeros((B, Cin, H + 2 * pad, W + 2 * pad), dtype=g2.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
            dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=1)

    return Tensor(out, _parents=parents, _grad_fn=grad_fn)


class Adam:
    """Adam over a dict of named parameter tensors; updates in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict | None = None):
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.data.shape}")
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        for k in self.params:
            if state["m"][k].shape != self.params[k].data.shape:
                raise ValueError(f"Adam state for {k} does not match the parameter shape")
        self.step_count = int(state["step"])
        self.m = {k: np.array(state["m"][k], dtype=self.params[k].data.dtype) for k in self.params}
        self.v = {k: np.array(state["v"][k], dtype=self.params[k].data.dtype) for k in self.params}


# --- checkpoints -----------------------------------------------------------

CKP_MAGIC = b"CKP1"
CKP_VERSION = 1


def save_checkpoint(path, params: dict, adam: Adam | None = None, meta: dict | None = None):
    """Named float64 tensors plus optional Adam moments and a JSON meta block."""
    meta = dict(meta or {})
    tensors = {k: np.asarray(v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    if adam is not None:
        meta["adam_step"] = adam.step_count
        for k in adam.m:
            tensors[f"adam/m/{k}"] = adam.m[k]
            tensors[f"adam/v/{k}"] = adam.v[k]
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKP_MAGIC)
        fh.write(struct.pack("<II", CKP_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, adam_state or None, meta)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKP_MAGIC:
        raise ValueError(f"{path}: not a CKP1 checkpoint")
    version, meta_len = struct.unpack_from("<II", buf, 4)
    if version != CKP_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(buf[off:off + meta_len])
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    params = {k: v for k, v in tensors.items() if not k.startswith("adam/")}
    adam_state = None
    if "adam_step" in meta:
        adam_state = {"step": meta["adam_step"],
                      "m": {k[7:]: v for k, v in tensors.items() if k.startswith("adam/m/")},
                      "v": {k[7:]: v for k, v in tensors.items() if k.startswith("adam/v/")}}
    return params, adam_state, meta
