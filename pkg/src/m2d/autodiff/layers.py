"""Network layers: conv / transposed conv / batchnorm / linear / pooling.

Convolutions lower to im2col/col2im (see :mod:`m2d.kernels`) plus batched
matmuls, so BLAS does the arithmetic on both the forward and backward paths.
Weight layouts follow the usual conventions: Conv2d [out, in, kh, kw],
ConvTranspose2d [in, out, kh, kw], Linear [out, in].
"""

from __future__ import annotations

import math
from typing import Iterator, Optional, Tuple

import numpy as np

from .. import kernels
from .tensor import ShapeMismatch, Tensor, from_op


class Module:
    """Minimal container: tracks parameters, buffers, submodules, train mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield f"{prefix}{name}", b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self, prefix: str = "") -> dict:
        out = {name: p.data for name, p in self.named_parameters(prefix)}
        out.update({name: b for name, b in self.named_buffers(prefix)})
        return out

    def load_state_dict(self, state: dict, prefix: str = "") -> None:
        """Copy arrays into this module; validates shapes before any write."""
        targets = dict(self.named_parameters(prefix))
        buffers = dict(self.named_buffers(prefix))
        for name in list(targets) + list(buffers):
            if name not in state:
                raise KeyError(f"missing entry {name!r} in state")
        for name, p in targets.items():
            src = np.asarray(state[name])
            if tuple(src.shape) != tuple(p.data.shape):
                raise ShapeMismatch(
                    f"shape mismatch for {name}: checkpoint {tuple(src.shape)} vs model {tuple(p.data.shape)}"
                )
        for name, b in buffers.items():
            src = np.asarray(state[name])
            if tuple(src.shape) != tuple(b.shape):
                raise ShapeMismatch(
                    f"shape mismatch for {name}: checkpoint {tuple(src.shape)} vs model {tuple(b.shape)}"
                )
        for name, p in targets.items():
            p.data[...] = np.asarray(state[name]).astype(p.data.dtype)
        for name, b in buffers.items():
            b[...] = np.asarray(state[name]).astype(b.dtype)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def bias_uniform(rng: np.random.Generator, n: int, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n).astype(dtype)


# ---------------------------------------------------------------------------
# functional primitives


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"affine: x {x.shape} vs w {w.shape}")
    data = x.data @ w.data.T + b.data

    def bwd(out):
        def run():
            g = out.grad
            x.accumulate_grad(g @ w.data)
            w.accumulate_grad(g.T @ x.data)
            b.accumulate_grad(g.sum(axis=0))

        return run

    return from_op(data, (x, w, b), bwd)


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x: Tensor, w: Tensor, b, stride: tuple, padding: tuple) -> Tensor:
    n, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv2d: input channels {cin} vs weight {cin_w}")
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd}")
    xp = _pad2d(x.data, ph, pw)
    cols = kernels.im2col(xp, kh, kw, sh, sw, ho, wo)  # [N, cin*kh*kw, ho*wo]
    w2 = w.data.reshape(cout, -1)
    out_data = np.matmul(w2, cols)
    if b is not None:
        out_data += b.data[:, None]
    out_data = out_data.reshape(n, cout, ho, wo)

    def bwd(out):
        def run():
            g = out.grad.reshape(n, cout, ho * wo)
            if b is not None:
                b.accumulate_grad(g.sum(axis=(0, 2)))
            w.accumulate_grad(np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))
            dcols = np.matmul(w2.T, g)
            dxp = kernels.col2im(dcols, cin, h + 2 * ph, wd + 2 * pw, kh, kw, sh, sw, ho, wo)
            x.accumulate_grad(dxp[:, :, ph : ph + h, pw : pw + wd])

        return run

    return from_op(out_data, (x, w) if b is None else (x, w, b), bwd)


def conv_transpose2d(x: Tensor, w: Tensor, b, stride: tuple, padding: tuple) -> Tensor:
    n, cin, h, wd = x.data.shape
    cin_w, cout, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv_transpose2d: input channels {cin} vs weight {cin_w}")
    sh, sw = stride
    ph, pw = padding
    hp = (h - 1) * sh + kh
    wp = (wd - 1) * sw + kw
    ho = hp - 2 * ph
    wo = wp - 2 * pw
    if ho < 1 or wo < 1:
        raise ShapeMismatch("conv_transpose2d: padding eats the whole output")
    w2 = w.data.reshape(cin, cout * kh * kw)
    x2 = x.data.reshape(n, cin, h * wd)
    cols = np.matmul(w2.T, x2)  # [N, cout*kh*kw, h*wd]
    canvas = kernels.col2im(cols, cout, hp, wp, kh, kw, sh, sw, h, wd)
    out_data = canvas[:, :, ph : ph + ho, pw : pw + wo]
    if b is not None:
        out_data = out_data + b.data[None, :, None, None]

    def bwd(out):
        def run():
            gp = _pad2d(out.grad, ph, pw)
            if b is not None:
                b.accumulate_grad(out.grad.sum(axis=(0, 2, 3)))
            gcols = kernels.im2col(gp, kh, kw, sh, sw, h, wd)  # [N, cout*kh*kw, h*wd]
            x.accumulate_grad(np.matmul(w2, gcols).reshape(x.data.shape))
            w.accumulate_grad(np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))

        return run

    return from_op(out_data, (x, w) if b is None else (x, w, b), bwd)


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple) -> Tensor:
    """Adaptive mean pooling; a ``None`` target keeps that axis unchanged."""
    n, c, h, w = x.data.shape
    oh = h if out_hw[0] is None else out_hw[0]
    ow = w if out_hw[1] is None else out_hw[1]
    hb = [(int(math.floor(i * h / oh)), int(math.ceil((i + 1) * h / oh))) for i in range(oh)]
    wb = [(int(math.floor(j * w / ow)), int(math.ceil((j + 1) * w / ow))) for j in range(ow)]
    data = np.empty((n, c, oh, ow), dtype=x.data.dtype)
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            data[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    def bwd(out):
        def run():
            dx = np.zeros_like(x.data)
            for i, (h0, h1) in enumerate(hb):
                for j, (w0, w1) in enumerate(wb):
                    area = (h1 - h0) * (w1 - w0)
                    dx[:, :, h0:h1, w0:w1] += out.grad[:, :, i : i + 1, j : j + 1] / area
            x.accumulate_grad(dx)

        return run

    return from_op(data, (x,), bwd)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    if x.data.ndim != 4 or x.data.shape[1] != gamma.data.shape[0]:
        raise ShapeMismatch(f"batchnorm2d: input {x.shape} vs {gamma.shape} channels")
    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        # stats in storage dtype; numpy's pairwise summation keeps f32 adequate
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        unbiased = var * (m / max(m - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    mean = mean.astype(x.data.dtype)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bwd(out):
        def run():
            g = out.grad
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                dx = (dxhat - s1 / m - xhat * s2 / m) * inv_std[None, :, None, None]
            else:
                dx = dxhat * inv_std[None, :, None, None]
            x.accumulate_grad(dx)

        return run

    return from_op(data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# layer modules


def _pair(v) -> tuple:
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(kaiming_uniform(rng, (out_features, in_features), in_features, dtype), requires_grad=True)
        self.bias = Tensor(bias_uniform(rng, out_features, in_features, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel_size, stride=1, padding=0, rng=None, dtype=np.float32, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.weight = Tensor(kaiming_uniform(rng, (cout, cin, kh, kw), cin * kh * kw, dtype), requires_grad=True)
        self.bias = Tensor(bias_uniform(rng, cout, cin * kh * kw, dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel_size, stride=1, padding=0, rng=None, dtype=np.float32, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.weight = Tensor(kaiming_uniform(rng, (cin, cout, kh, kw), cin * kh * kw, dtype), requires_grad=True)
        self.bias = Tensor(bias_uniform(rng, cout, cin * kh * kw, dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    """1-d transposed conv, run through the 2-d kernels with height 1."""

    def __init__(self, cin, cout, kernel_size, stride=1, padding=0, rng=None, dtype=np.float32):
        super().__init__()
        self.stride = int(stride)
        self.padding = int(padding)
        k = int(kernel_size)
        self.weight = Tensor(kaiming_uniform(rng, (cin, cout, 1, k), cin * k, dtype), requires_grad=True)
        self.bias = Tensor(bias_uniform(rng, cout, cin * k, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import reshape

        n, c, length = x.data.shape
        x4 = reshape(x, (n, c, 1, length))
        out = conv_transpose2d(x4, self.weight, self.bias, (1, self.stride), (0, self.padding))
        return reshape(out, (out.data.shape[0], out.data.shape[1], out.data.shape[3]))


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )
