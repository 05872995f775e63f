"""Minimal dense-tensor arithmetic with reverse-mode gradients.

Everything is float64. A Tensor wraps a numpy array plus an optional
gradient slot; operations record a backward closure so that calling
``backward()`` on a scalar result accumulates gradients into every
reachable input. The op set is exactly what the segmentation pipeline
composes: convolution, max-pooling, ReLU, zero-padding, concatenation,
l2 normalization, elementwise sum, dropout, pixel gathering, dense
(1x1-conv equivalent) layers, and softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

L2_EPSILON = 1e-12


class Tensor:
    """Dense n-d array with a gradient slot and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Reverse-mode pass from this tensor through every parent.

        ``seed`` defaults to ones (the usual choice for a scalar loss).
        Gradients accumulate: callers reusing parameters across passes
        must zero them in between.
        """
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        if seed is None:
            seed = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], None]) -> Tensor:
    """Wrap an op result; the backward closure receives the output tensor."""
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = lambda: backward(out)
    return out


@dataclass
class ConvLayer:
    """2-d convolution parameters: kernel (out, in, kh, kw) and bias (out,)."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    layer_id: str = "conv"

    def __post_init__(self):
        if self.kernel.data.ndim != 4:
            raise ValueError(f"{self.layer_id}: kernel must be 4-d (out, in, kh, kw)")
        if self.bias.data.shape != (self.kernel.data.shape[0],):
            raise ValueError(f"{self.layer_id}: bias length must equal output channels")
        if self.stride < 1:
            raise ValueError(f"{self.layer_id}: stride must be >= 1")
        if self.padding < 0:
            raise ValueError(f"{self.layer_id}: padding must be >= 0")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.layer_id}.kernel", self.kernel), (f"{self.layer_id}.bias", self.bias)]


@dataclass
class DenseLayer:
    """Per-sample dense layer; equivalent to a 1x1 convolution on a sampled pixel."""

    weight: Tensor  # (in, out)
    bias: Tensor    # (out,)
    layer_id: str = "dense"

    def __post_init__(self):
        if self.weight.data.ndim != 2:
            raise ValueError(f"{self.layer_id}: weight must be 2-d (in, out)")
        if self.bias.data.shape != (self.weight.data.shape[1],):
            raise ValueError(f"{self.layer_id}: bias length must equal output width")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.layer_id}.weight", self.weight), (f"{self.layer_id}.bias", self.bias)]


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(C, H, W) -> (C*kh*kw, OH*OW) patch matrix. Input is already padded."""
    c = x.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C, OH, OW, kh, kw)
    oh, ow = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Cross-correlation of a (C, H, W) input with a ConvLayer.

    Output spatial size is floor((H + 2*pad - kh)/stride) + 1 per axis.
    Backward accumulates into kernel.grad, bias.grad and x.grad.
    """
    if x.data.ndim != 3:
        raise ValueError("conv2d input must be 3-d (C, H, W)")
    out_ch, in_ch, kh, kw = layer.kernel.data.shape
    c, h, w = x.data.shape
    if c != in_ch:
        raise ValueError(
            f"{layer.layer_id}: input has {c} channels but kernel expects {in_ch}"
        )
    pad, stride = layer.padding, layer.stride
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError(f"{layer.layer_id}: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    kmat = layer.kernel.data.reshape(out_ch, -1)
    out = (kmat @ cols + layer.bias.data[:, None]).reshape(out_ch, oh, ow)

    def backward(o: Tensor):
        g = o.grad.reshape(out_ch, -1)
        layer.kernel.accumulate_grad((g @ cols.T).reshape(layer.kernel.data.shape))
        layer.bias.accumulate_grad(g.sum(axis=1))
        dcols = (kmat.T @ g).reshape(in_ch, kh, kw, oh, ow)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, i, j]
        x.accumulate_grad(dxp[:, pad : pad + h, pad : pad + w] if pad else dxp)

    return _result(out, (x, layer.kernel, layer.bias), backward)


def maxpool(x: Tensor, window: int, stride: int) -> tuple[Tensor, np.ndarray]:
    """Max-pool a (C, H, W) tensor; also return per-cell argmax coordinates.

    The argmax map has shape (C, OH, OW, 2) holding (row, col) into the
    input; ties resolve to the first row-major index so replays are
    deterministic. Backward routes gradient only to argmax positions.
    """
    if x.data.ndim != 3:
        raise ValueError("maxpool input must be 3-d (C, H, W)")
    if window < 1 or stride < 1:
        raise ValueError("maxpool window and stride must be >= 1")
    c, h, w = x.data.shape
    if window > h or window > w:
        raise ValueError(f"maxpool window {window} larger than input {h}x{w}")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    oh, ow = windows.shape[1], windows.shape[2]
    flat = windows.reshape(c, oh, ow, window * window)
    idx = flat.argmax(axis=-1)  # first occurrence on ties (row-major)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    base_r = (np.arange(oh) * stride)[None, :, None]
    base_c = (np.arange(ow) * stride)[None, None, :]
    rows = base_r + idx // window
    cols = base_c + idx % window
    argmax_map = np.stack([rows, cols], axis=-1)

    ch_idx = np.arange(c)[:, None, None]

    def backward(o: Tensor):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (np.broadcast_to(ch_idx, rows.shape), rows, cols), o.grad)
        x.accumulate_grad(dx)

    return _result(out, (x,), backward), argmax_map


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(o: Tensor):
        x.accumulate_grad(o.grad * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), backward)


def eltwise_sum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; backward passes the incoming gradient to both addends."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"eltwise_sum shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(o: Tensor):
        a.accumulate_grad(o.grad)
        b.accumulate_grad(o.grad)

    return _result(a.data + b.data, (a, b), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; backward splits the gradient back."""
    if not parts:
        raise ValueError("concat needs at least one tensor")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(o: Tensor):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * o.grad.ndim
            sl[axis] = slice(lo, hi)
            p.accumulate_grad(o.grad[tuple(sl)])

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the spatial axes of a (C, H, W) tensor; backward crops."""
    if min(top, bottom, left, right) < 0:
        raise ValueError("pad amounts must be >= 0")
    c, h, w = x.data.shape

    def backward(o: Tensor):
        x.accumulate_grad(o.grad[:, top : top + h, left : left + w])

    return _result(np.pad(x.data, ((0, 0), (top, bottom), (left, right))), (x,), backward)


def l2_normalize(x: Tensor, epsilon: float = L2_EPSILON) -> Tensor:
    """Scale to unit l2 norm along the last axis: x / max(||x||, epsilon).

    Near-zero inputs (norm < epsilon) pass through scaled by 1/epsilon,
    which keeps the zero vector fixed instead of dividing by zero.
    """
    norms = np.sqrt(np.square(x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, epsilon)
    y = x.data / denom
    live = norms >= epsilon  # below epsilon the denominator is a constant

    def backward(o: Tensor):
        inner = (o.grad * y).sum(axis=-1, keepdims=True)
        dx = np.where(live, (o.grad - y * inner) / denom, o.grad / epsilon)
        x.accumulate_grad(dx)

    return _result(y, (x,), backward)


def dropout(x: Tensor, keep_prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/keep_prob at train time."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        scale = np.ones_like(x.data)
    else:
        scale = (rng.random(x.data.shape) < keep_prob) / keep_prob

    def backward(o: Tensor):
        x.accumulate_grad(o.grad * scale)

    return _result(x.data * scale, (x,), backward)


def gather_cells(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick the channel column at each (row, col) of a (C, H, W) map.

    Returns an (n, C) tensor, one row per requested cell. Backward
    scatter-adds into exactly those cells, so gradient locality holds by
    construction.
    """
    c, h, w = x.data.shape
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.min(initial=0) < 0 or cols.min(initial=0) < 0 or rows.max(initial=0) >= h or cols.max(initial=0) >= w:
        raise ValueError("gather_cells coordinates out of bounds")
    out = x.data[:, rows, cols].T.copy()
    flat = rows * w + cols

    def backward(o: Tensor):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad.reshape(c, h * w).T, flat, o.grad)

    return _result(out, (x,), backward)


def dense(x: Tensor, layer: DenseLayer) -> Tensor:
    """Apply a DenseLayer to a batch of row features: (n, in) -> (n, out)."""
    if x.data.ndim != 2:
        raise ValueError("dense input must be 2-d (n, features)")
    din, dout = layer.weight.data.shape
    if x.data.shape[1] != din:
        raise ValueError(
            f"{layer.layer_id}: input width {x.data.shape[1]} does not match weight ({din}, {dout})"
        )
    out = x.data @ layer.weight.data + layer.bias.data

    def backward(o: Tensor):
        layer.weight.accumulate_grad(x.data.T @ o.grad)
        layer.bias.accumulate_grad(o.grad.sum(axis=0))
        x.accumulate_grad(o.grad @ layer.weight.data.T)

    return _result(out, (x, layer.weight, layer.bias), backward)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor | np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Single-sample softmax cross-entropy.

    Returns (loss, gradient wrt logits) where loss = -log softmax[label]
    and the gradient is softmax(logits) - onehot(label).
    """
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("softmax_xent expects a 1-d logit vector")
    k = z.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    shifted = z - z.max()
    logsumexp = np.log(np.exp(shifted).sum())
    loss = float(logsumexp - shifted[label])
    grad = _softmax(z)
    grad[label] -= 1.0
    return loss, grad


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over a batch of (n, K) logits."""
    if logits.data.ndim != 2:
        raise ValueError("cross_entropy expects (n, K) logits")
    n, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range for {k} classes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float((logsumexp - shifted[np.arange(n), labels]).mean())
    probs = _softmax(logits.data)

    def backward(o: Tensor):
        g = probs.copy()
        g[np.arange(n), labels] -= 1.0
        logits.accumulate_grad(g * (o.grad / n))

    return _result(np.float64(loss), (logits,), backward)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of raw logits (no gradient tracking)."""
    return _softmax(np.asarray(logits, dtype=np.float64))


def xavier_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-based initialization on [-sqrt(6/(fan_in+fan_out)), +]."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def make_conv_layer(
    in_ch: int,
    out_ch: int,
    kh: int,
    kw: int,
    stride: int,
    padding: int,
    layer_id: str,
    rng: np.random.Generator,
) -> ConvLayer:
    kernel = xavier_uniform((out_ch, in_ch, kh, kw), in_ch * kh * kw, out_ch * kh * kw, rng)
    return ConvLayer(
        kernel=Tensor(kernel, requires_grad=True),
        bias=Tensor(np.zeros(out_ch), requires_grad=True),
        stride=stride,
        padding=padding,
        layer_id=layer_id,
    )


def make_dense_layer(din: int, dout: int, layer_id: str, rng: np.random.Generator) -> DenseLayer:
    weight = xavier_uniform((din, dout), din, dout, rng)
    return DenseLayer(
        weight=Tensor(weight, requires_grad=True),
        bias=Tensor(np.zeros(dout), requires_grad=True),
        layer_id=layer_id,
    )
