"""Minimal neural-network core: layers, backprop, losses, gradient checking.

Everything is plain numpy. The centerpiece is the locally-connected
convolution layer, which learns a distinct k x k filter for every output
location instead of sliding one shared filter; an ordinary shared-weight
convolution is also provided for the verification sub-networks. Layers
compose through the Network class, which owns parameters, caches forward
activations, and accumulates gradients into persistent buffers.

Batched activations are (N, C, H, W) arrays; the single-sample public ops
take (C, H, W). Training code typically runs float32 for speed; gradient
checks use float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._kernels import col2im_add
from .errors import DataError

PADDING_SAME = "same_zero"
PADDING_VALID = "valid"
TRAIN = "train"
EVAL = "eval"

PROB_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# layer descriptors

@dataclass(frozen=True)
class LocalConv:
    """Locally-connected convolution: per-location k x k filters, no sharing."""

    k: int
    out_channels: int
    padding: str = PADDING_SAME


@dataclass(frozen=True)
class Conv:
    """Ordinary shared-weight convolution."""

    k: int
    out_channels: int
    padding: str = PADDING_SAME


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class MaxPool:
    cell: int = 2


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5


@dataclass(frozen=True)
class ZeroPad:
    """Pad the bottom/right spatial edges with zeros (e.g. to even dims)."""

    pad_h: int = 0
    pad_w: int = 0


@dataclass(frozen=True)
class Dense:
    """Affine map to out_dim; spatial inputs are flattened channel-major."""

    out_dim: int


LayerSpec = Union[LocalConv, Conv, Relu, Sigmoid, MaxPool, Dropout, ZeroPad, Dense]


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Tuple[int, int, int]  # (channels, height, width)
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        infer_shapes(self)  # chain-check at construction


def _conv_out_hw(h: int, w: int, k: int, padding: str) -> Tuple[int, int]:
    if padding == PADDING_SAME:
        if k % 2 == 0:
            raise DataError(f"{PADDING_SAME} requires odd filter size, got k={k}")
        return h, w
    if padding == PADDING_VALID:
        if k > h or k > w:
            raise DataError(f"filter k={k} larger than input {h}x{w}")
        return h - k + 1, w - k + 1
    raise DataError(f"unknown padding {padding!r}")


def infer_shapes(spec: NetworkSpec) -> List[Tuple[int, ...]]:
    """Shape after each layer, starting from the input shape.

    Spatial shapes are (C, H, W); a Dense layer switches to (dim,).
    Raises DataError on any incompatibility (odd dims into MaxPool,
    spatial layer after Dense, non-positive sizes).
    """
    c, h, w = spec.input_shape
    if c < 1 or h < 1 or w < 1:
        raise DataError(f"bad input shape {spec.input_shape}")
    shapes: List[Tuple[int, ...]] = [(c, h, w)]
    cur: Tuple[int, ...] = (c, h, w)
    for idx, layer in enumerate(spec.layers):
        spatial = len(cur) == 3
        if isinstance(layer, (LocalConv, Conv)):
            if not spatial:
                raise DataError(f"layer {idx}: convolution after flattening")
            if layer.k < 1 or layer.out_channels < 1:
                raise DataError(f"layer {idx}: bad convolution config {layer}")
            oh, ow = _conv_out_hw(cur[1], cur[2], layer.k, layer.padding)
            cur = (layer.out_channels, oh, ow)
        elif isinstance(layer, (Relu, Sigmoid)):
            pass
        elif isinstance(layer, MaxPool):
            if not spatial:
                raise DataError(f"layer {idx}: pooling after flattening")
            if layer.cell < 1:
                raise DataError(f"layer {idx}: bad pool cell {layer.cell}")
            if cur[1] % layer.cell or cur[2] % layer.cell:
                raise DataError(
                    f"layer {idx}: pool cell {layer.cell} does not divide "
                    f"{cur[1]}x{cur[2]}"
                )
            cur = (cur[0], cur[1] // layer.cell, cur[2] // layer.cell)
        elif isinstance(layer, Dropout):
            if not 0.0 <= layer.rate < 1.0:
                raise DataError(f"layer {idx}: dropout rate {layer.rate}")
        elif isinstance(layer, ZeroPad):
            if not spatial:
                raise DataError(f"layer {idx}: padding after flattening")
            if layer.pad_h < 0 or layer.pad_w < 0:
                raise DataError(f"layer {idx}: negative padding")
            cur = (cur[0], cur[1] + layer.pad_h, cur[2] + layer.pad_w)
        elif isinstance(layer, Dense):
            if layer.out_dim < 1:
                raise DataError(f"layer {idx}: bad Dense out_dim {layer.out_dim}")
            cur = (layer.out_dim,)
        else:
            raise DataError(f"layer {idx}: unknown layer {layer!r}")
        shapes.append(cur)
    return shapes


# ---------------------------------------------------------------------------
# parameter containers for the single-sample public ops

@dataclass
class LocallyConnectedParams:
    """Non-shared filters: weights[q, u, v, p, i, j], biases[q].

    Output channel q at location (u, v) applies its own (p, i, j) filter to
    the input patch anchored there.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 6:
            raise DataError(
                f"weights must be (q,u,v,p,k,k), got shape {self.weights.shape}"
            )
        q, _, _, _, k1, k2 = self.weights.shape
        if k1 != k2:
            raise DataError(f"filters must be square, got {k1}x{k2}")
        if self.biases.shape != (q,):
            raise DataError(
                f"biases must have shape ({q},), got {self.biases.shape}"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def out_h(self) -> int:
        return self.weights.shape[1]

    @property
    def out_w(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def k(self) -> int:
        return self.weights.shape[4]


@dataclass
class FullyConnectedParams:
    """Affine parameters: weight (out_dim, in_dim), bias (out_dim,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DataError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DataError(
                f"bias shape {self.bias.shape} does not match weight "
                f"{self.weight.shape}"
            )


# ---------------------------------------------------------------------------
# batched kernels

def _as_batch(x, name: str = "tensor") -> np.ndarray:
    a = np.asarray(x)
    if a.ndim != 4:
        raise DataError(f"{name} must be (N, C, H, W), got shape {a.shape}")
    return a


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _im2col(xpad: np.ndarray, k: int, buf: Optional[np.ndarray] = None) -> np.ndarray:
    """Gather k x k patches of (N, P, Hp, Wp) into (U*V, N, P*k*k)."""
    n, p = xpad.shape[:2]
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))  # (N, P, U, V, k, k)
    u, v = win.shape[2], win.shape[3]
    src = win.transpose(2, 3, 0, 1, 4, 5)  # (U, V, N, P, k, k)
    if buf is None or buf.shape != src.shape or buf.dtype != xpad.dtype:
        buf = np.empty(src.shape, dtype=xpad.dtype)
    np.copyto(buf, src)
    return buf.reshape(u * v, n, p * k * k)


def _col2im(gcols: np.ndarray, x_shape: Tuple[int, ...], k: int, pad: int,
            u: int, v: int) -> np.ndarray:
    """Scatter-add patch gradients (U*V, N, P*k*k) back to (N, P, H, W)."""
    n, p, h, w = x_shape
    g6 = np.ascontiguousarray(gcols).reshape(u, v, n, p, k, k)
    gxpad = np.zeros((n, p, h + 2 * pad, w + 2 * pad), dtype=gcols.dtype)
    col2im_add(g6, gxpad, u, v, k)
    if pad == 0:
        return gxpad
    return gxpad[:, :, pad : pad + h, pad : pad + w].copy()


def _lc_pack(weights: np.ndarray) -> np.ndarray:
    """(Q, U, V, P, k, k) spec-order weights -> internal (U*V, P*k*k, Q)."""
    q, u, v, p, k, _ = weights.shape
    return np.ascontiguousarray(
        weights.transpose(1, 2, 3, 4, 5, 0).reshape(u * v, p * k * k, q)
    )


def _lc_unpack(internal: np.ndarray, u: int, v: int, p: int, k: int) -> np.ndarray:
    """Internal (U*V, P*k*k, Q) -> spec-order (Q, U, V, P, k, k)."""
    q = internal.shape[2]
    return np.ascontiguousarray(
        internal.reshape(u, v, p, k, k, q).transpose(5, 0, 1, 2, 3, 4)
    )


def _lc_forward_batch(x: np.ndarray, w_int: np.ndarray, biases: np.ndarray,
                      k: int, pad: int, u: int, v: int,
                      col_buf: Optional[np.ndarray] = None):
    """Locally-connected forward on a batch. Returns (out, cols)."""
    n = x.shape[0]
    q = w_int.shape[2]
    cols = _im2col(_pad_spatial(x, pad), k, buf=col_buf)  # (UV, N, D)
    out = np.matmul(cols, w_int)  # (UV, N, Q)
    out += biases.astype(out.dtype)
    return np.ascontiguousarray(out.transpose(1, 2, 0)).reshape(n, q, u, v), cols


def _lc_backward_batch(cols: np.ndarray, w_int: np.ndarray, gout: np.ndarray,
                       x_shape: Tuple[int, ...], k: int, pad: int,
                       u: int, v: int, need_gx: bool,
                       gw_out: Optional[np.ndarray] = None):
    """Gradients for the locally-connected forward.

    The per-location filter gradient is the outer product of that
    location's output error with its input patch, realized as one batched
    matmul over locations.
    """
    n, q = gout.shape[0], gout.shape[1]
    g = np.ascontiguousarray(gout.reshape(n, q, u * v).transpose(2, 0, 1))
    gw = np.matmul(cols.transpose(0, 2, 1), g, out=gw_out)  # (UV, D, Q)
    gb = gout.sum(axis=(0, 2, 3))
    gx = None
    if need_gx:
        gcols = np.matmul(g, w_int.transpose(0, 2, 1))  # (UV, N, D)
        gx = _col2im(gcols, x_shape, k, pad, u, v)
    return gx, gw, gb


def _conv_forward_batch(x: np.ndarray, w_mat: np.ndarray, biases: np.ndarray,
                        k: int, pad: int, u: int, v: int,
                        col_buf: Optional[np.ndarray] = None):
    """Shared-weight convolution forward. w_mat is (P*k*k, Q)."""
    n = x.shape[0]
    q = w_mat.shape[1]
    cols = _im2col(_pad_spatial(x, pad), k, buf=col_buf)  # (UV, N, D)
    flat = cols.reshape(u * v * n, -1)
    out = flat @ w_mat  # (UV*N, Q)
    out += biases.astype(out.dtype)
    return (
        np.ascontiguousarray(out.reshape(u * v, n, q).transpose(1, 2, 0))
        .reshape(n, q, u, v),
        cols,
    )


def _conv_backward_batch(cols: np.ndarray, w_mat: np.ndarray, gout: np.ndarray,
                         x_shape: Tuple[int, ...], k: int, pad: int,
                         u: int, v: int, need_gx: bool):
    n, q = gout.shape[0], gout.shape[1]
    g = np.ascontiguousarray(gout.reshape(n, q, u * v).transpose(2, 0, 1))
    g2 = g.reshape(u * v * n, q)
    flat = cols.reshape(u * v * n, -1)
    gw = flat.T @ g2  # (D, Q)
    gb = gout.sum(axis=(0, 2, 3))
    gx = None
    if need_gx:
        gcols = (g2 @ w_mat.T).reshape(u * v, n, -1)
        gx = _col2im(gcols, x_shape, k, pad, u, v)
    return gx, gw, gb


def _maxpool_forward_batch(x: np.ndarray, cell: int):
    """Max over cell x cell blocks; also returns the argmax slot per block.

    Slots number the block positions in row-major order; ties take the
    first maximal slot, so routing is deterministic.
    """
    n, c, h, w = x.shape
    if h % cell or w % cell:
        raise DataError(f"pool cell {cell} does not divide {h}x{w}")
    views = [x[:, :, di::cell, dj::cell]
             for di in range(cell) for dj in range(cell)]
    out = views[0]
    for vw in views[1:]:
        out = np.maximum(out, vw)
    arg = np.full(out.shape, len(views) - 1, dtype=np.int8)
    for slot in range(len(views) - 2, -1, -1):
        arg = np.where(views[slot] == out, np.int8(slot), arg)
    return out, arg


def _maxpool_backward_batch(arg: np.ndarray, gout: np.ndarray, cell: int):
    n, c, oh, ow = gout.shape
    gx = np.zeros((n, c, oh * cell, ow * cell), dtype=gout.dtype)
    slot = 0
    for di in range(cell):
        for dj in range(cell):
            gx[:, :, di::cell, dj::cell] = np.where(arg == slot, gout, 0)
            slot += 1
    return gx


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# single-sample public ops

def _tensor3(x, name: str = "tensor") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 3:
        raise DataError(f"{name} must be (C, H, W), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def lc_forward(x, params: LocallyConnectedParams,
               padding: str = PADDING_SAME) -> np.ndarray:
    """Locally-connected pre-activation of one (P, H, W) input."""
    a = _tensor3(x, "input")
    p, h, w = a.shape
    if p != params.in_channels:
        raise DataError(
            f"input channels {p} != filter in_channels {params.in_channels}"
        )
    oh, ow = _conv_out_hw(h, w, params.k, padding)
    if (oh, ow) != (params.out_h, params.out_w):
        raise DataError(
            f"params cover {params.out_h}x{params.out_w} locations but "
            f"{padding} output is {oh}x{ow}"
        )
    pad = params.k // 2 if padding == PADDING_SAME else 0
    w_int = _lc_pack(params.weights)
    out, _ = _lc_forward_batch(a[None], w_int, params.biases, params.k, pad, oh, ow)
    return out[0]


def lc_backward(x, params: LocallyConnectedParams, grad_out,
                padding: str = PADDING_SAME):
    """Gradients of lc_forward: (grad_x, grad_weights, grad_biases)."""
    a = _tensor3(x, "input")
    g = _tensor3(grad_out, "grad_out")
    oh, ow = _conv_out_hw(a.shape[1], a.shape[2], params.k, padding)
    if g.shape != (params.out_channels, oh, ow):
        raise DataError(
            f"grad_out shape {g.shape} != output shape "
            f"({params.out_channels}, {oh}, {ow})"
        )
    pad = params.k // 2 if padding == PADDING_SAME else 0
    w_int = _lc_pack(params.weights)
    cols = _im2col(_pad_spatial(a[None], pad), params.k)
    gx, gw, gb = _lc_backward_batch(
        cols, w_int, g[None], a[None].shape, params.k, pad, oh, ow, need_gx=True
    )
    return gx[0], _lc_unpack(gw, oh, ow, params.in_channels, params.k), gb


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return np.asarray(grad_out, dtype=np.float64) * (a > 0.0)


def maxpool_forward(x, cell: int = 2):
    """Max over cell x cell blocks of one (C, H, W) tensor.

    Returns (output, record); pass the record to maxpool_backward. Ties
    route to the first maximum in row-major scan order within the cell.
    """
    a = _tensor3(x)
    out, arg = _maxpool_forward_batch(a[None], cell)
    return out[0], (arg, cell, a.shape)


def maxpool_backward(record, grad_out) -> np.ndarray:
    arg, cell, _shape = record
    g = _tensor3(grad_out, "grad_out")
    return _maxpool_backward_batch(arg, g[None], cell)[0]


def fc_forward(x_flat, params: FullyConnectedParams) -> np.ndarray:
    v = np.asarray(x_flat, dtype=np.float64).ravel()
    if v.size != params.weight.shape[1]:
        raise DataError(
            f"input dim {v.size} != weight in_dim {params.weight.shape[1]}"
        )
    return params.weight @ v + params.bias


def fc_backward(x_flat, params: FullyConnectedParams, grad_out):
    v = np.asarray(x_flat, dtype=np.float64).ravel()
    g = np.asarray(grad_out, dtype=np.float64).ravel()
    if g.size != params.weight.shape[0]:
        raise DataError(
            f"grad dim {g.size} != weight out_dim {params.weight.shape[0]}"
        )
    return params.weight.T @ g, np.outer(g, v), g.copy()


def dropout_apply(x, rate: float, rng: np.random.Generator, mode: str = TRAIN):
    """Inverted dropout. Returns (output, keep mask scaled by 1/(1-rate))."""
    a = np.asarray(x, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise DataError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == EVAL or rate == 0.0:
        return a.copy(), np.ones_like(a)
    if mode != TRAIN:
        raise DataError(f"unknown mode {mode!r}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a * mask, mask


def recon_loss(pred, target):
    """Summed squared reconstruction error and its gradient wrt pred."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DataError(f"pred shape {p.shape} != target shape {t.shape}")
    d = p - t
    return float(np.sum(d * d)), 2.0 * d


def xent_loss(pred_prob: float, label: int):
    """Binary cross-entropy and its gradient wrt the pre-sigmoid logit."""
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label!r}")
    p = min(max(float(pred_prob), PROB_CLAMP), 1.0 - PROB_CLAMP)
    loss = -(label * math.log(p) + (1 - label) * math.log(1.0 - p))
    return loss, p - float(label)


# ---------------------------------------------------------------------------
# network layers (internal, batched, persistent buffers)

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: Tuple[int, ...], dtype) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class _Layer:
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]

    def forward(self, x, mode, rng):
        raise NotImplementedError

    def backward(self, gout, need_gx):
        raise NotImplementedError

    def param_items(self):
        """(name, param array, grad array) triples; grads persist."""
        return []

    def export_params(self):
        """Parameter arrays in documented order and layout."""
        return []

    def import_params(self, arrays):
        if list(arrays):
            raise ValueError("layer takes no parameters")


class _LocalConvLayer(_Layer):
    def __init__(self, spec: LocalConv, in_shape, rng, dtype):
        p, h, w = in_shape
        self.spec = spec
        self.k = spec.k
        self.pad = spec.k // 2 if spec.padding == PADDING_SAME else 0
        self.u, self.v = _conv_out_hw(h, w, spec.k, spec.padding)
        self.in_shape = in_shape
        self.out_shape = (spec.out_channels, self.u, self.v)
        d = p * spec.k * spec.k
        # fans of one location's filter: a patch of d inputs feeding Q outputs
        self.w = glorot_uniform(
            rng, d, spec.out_channels, (self.u * self.v, d, spec.out_channels),
            dtype,
        )
        self.b = np.zeros(spec.out_channels, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._col_bufs = {}
        self._cols = None
        self._x_shape = None

    def forward(self, x, mode, rng):
        n = x.shape[0]
        key = (n, x.dtype)
        buf = self._col_bufs.get(key)
        out, cols = _lc_forward_batch(
            x, self.w, self.b, self.k, self.pad, self.u, self.v, col_buf=buf
        )
        base = cols.reshape(self.u, self.v, n, -1)
        self._col_bufs[key] = base.reshape(
            self.u, self.v, n, self.in_shape[0], self.k, self.k
        )
        self._cols = cols
        self._x_shape = x.shape
        return out

    def backward(self, gout, need_gx):
        gx, gw, gb = _lc_backward_batch(
            self._cols, self.w, gout, self._x_shape, self.k, self.pad,
            self.u, self.v, need_gx, gw_out=self.gw,
        )
        self.gb[...] = gb
        return gx

    def param_items(self):
        return [("lc_weights", self.w, self.gw), ("lc_biases", self.b, self.gb)]

    def spec_order_weights(self) -> np.ndarray:
        """Weights as the documented (Q, U, V, P, k, k) array."""
        return _lc_unpack(self.w, self.u, self.v, self.in_shape[0], self.k)

    def set_spec_order_weights(self, weights: np.ndarray) -> None:
        self.w[...] = _lc_pack(np.asarray(weights)).astype(self.w.dtype)

    def export_params(self):
        return [self.spec_order_weights(), self.b]

    def import_params(self, arrays):
        w, b = arrays
        self.set_spec_order_weights(w)
        self.b[...] = np.asarray(b, dtype=self.b.dtype)


class _ConvLayer(_Layer):
    def __init__(self, spec: Conv, in_shape, rng, dtype):
        p, h, w = in_shape
        self.spec = spec
        self.k = spec.k
        self.pad = spec.k // 2 if spec.padding == PADDING_SAME else 0
        self.u, self.v = _conv_out_hw(h, w, spec.k, spec.padding)
        self.in_shape = in_shape
        self.out_shape = (spec.out_channels, self.u, self.v)
        d = p * spec.k * spec.k
        self.w = glorot_uniform(
            rng, d, spec.out_channels * spec.k * spec.k, (d, spec.out_channels),
            dtype,
        )
        self.b = np.zeros(spec.out_channels, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cols = None
        self._x_shape = None

    def forward(self, x, mode, rng):
        out, cols = _conv_forward_batch(
            x, self.w, self.b, self.k, self.pad, self.u, self.v
        )
        self._cols = cols
        self._x_shape = x.shape
        return out

    def backward(self, gout, need_gx):
        gx, gw, gb = _conv_backward_batch(
            self._cols, self.w, gout, self._x_shape, self.k, self.pad,
            self.u, self.v, need_gx,
        )
        self.gw[...] = gw
        self.gb[...] = gb
        return gx

    def param_items(self):
        return [("conv_weights", self.w, self.gw), ("conv_biases", self.b, self.gb)]

    def spec_order_weights(self) -> np.ndarray:
        """Weights as the documented (Q, P, k, k) array."""
        q = self.out_shape[0]
        return np.ascontiguousarray(
            self.w.T.reshape(q, self.in_shape[0], self.k, self.k)
        )

    def set_spec_order_weights(self, weights: np.ndarray) -> None:
        q = self.out_shape[0]
        self.w[...] = np.asarray(weights).reshape(q, -1).T.astype(self.w.dtype)

    def export_params(self):
        return [self.spec_order_weights(), self.b]

    def import_params(self, arrays):
        w, b = arrays
        self.set_spec_order_weights(w)
        self.b[...] = np.asarray(b, dtype=self.b.dtype)


class _ReluLayer(_Layer):
    def __init__(self, in_shape):
        self.in_shape = self.out_shape = in_shape
        self._pos = None

    def forward(self, x, mode, rng):
        self._pos = x > 0
        return np.maximum(x, 0)

    def backward(self, gout, need_gx):
        return gout * self._pos


class _SigmoidLayer(_Layer):
    def __init__(self, in_shape):
        self.in_shape = self.out_shape = in_shape
        self._y = None

    def forward(self, x, mode, rng):
        self._y = _sigmoid(x)
        return self._y

    def backward(self, gout, need_gx):
        return gout * self._y * (1.0 - self._y)


class _MaxPoolLayer(_Layer):
    def __init__(self, spec: MaxPool, in_shape):
        c, h, w = in_shape
        if h % spec.cell or w % spec.cell:
            raise DataError(f"pool cell {spec.cell} does not divide {h}x{w}")
        self.cell = spec.cell
        self.in_shape = in_shape
        self.out_shape = (c, h // spec.cell, w // spec.cell)
        self._arg = None

    def forward(self, x, mode, rng):
        out, self._arg = _maxpool_forward_batch(x, self.cell)
        return out

    def backward(self, gout, need_gx):
        return _maxpool_backward_batch(self._arg, gout, self.cell)


class _DropoutLayer(_Layer):
    def __init__(self, spec: Dropout, in_shape):
        self.rate = spec.rate
        self.in_shape = self.out_shape = in_shape
        self._mask = None

    def forward(self, x, mode, rng):
        if mode == EVAL or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise DataError("dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        mask /= np.asarray(1.0 - self.rate, dtype=x.dtype)
        self._mask = mask
        return x * mask

    def backward(self, gout, need_gx):
        if self._mask is None:
            return gout
        return gout * self._mask


class _ZeroPadLayer(_Layer):
    def __init__(self, spec: ZeroPad, in_shape):
        c, h, w = in_shape
        self.ph, self.pw = spec.pad_h, spec.pad_w
        self.in_shape = in_shape
        self.out_shape = (c, h + self.ph, w + self.pw)

    def forward(self, x, mode, rng):
        if self.ph == 0 and self.pw == 0:
            return x
        n, c, h, w = x.shape
        out = np.zeros((n, c, h + self.ph, w + self.pw), dtype=x.dtype)
        out[:, :, :h, :w] = x
        return out

    def backward(self, gout, need_gx):
        h, w = self.in_shape[1], self.in_shape[2]
        return np.ascontiguousarray(gout[:, :, :h, :w])


class _DenseLayer(_Layer):
    def __init__(self, spec: Dense, in_shape, rng, dtype):
        in_dim = int(np.prod(in_shape))
        self.in_shape = in_shape
        self.out_shape = (spec.out_dim,)
        # stored (in_dim, out_dim) so forward/backward need no transposes
        self.w = glorot_uniform(rng, in_dim, spec.out_dim, (in_dim, spec.out_dim),
                                dtype)
        self.b = np.zeros(spec.out_dim, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, mode, rng):
        flat = x.reshape(x.shape[0], -1)
        self._x = flat
        return flat @ self.w + self.b

    def backward(self, gout, need_gx):
        np.matmul(self._x.T, gout, out=self.gw)
        self.gb[...] = gout.sum(axis=0)
        if not need_gx:
            return None
        return (gout @ self.w.T).reshape((gout.shape[0],) + tuple(self.in_shape))

    def param_items(self):
        return [("dense_weight", self.w, self.gw), ("dense_bias", self.b, self.gb)]

    def export_params(self):
        # documented layout is (out_dim, in_dim); internal is the transpose
        return [np.ascontiguousarray(self.w.T), self.b]

    def import_params(self, arrays):
        w, b = arrays
        self.w[...] = np.asarray(w, dtype=self.w.dtype).T
        self.b[...] = np.asarray(b, dtype=self.b.dtype)


def _build_layer(spec: LayerSpec, in_shape, rng, dtype) -> _Layer:
    if isinstance(spec, LocalConv):
        return _LocalConvLayer(spec, in_shape, rng, dtype)
    if isinstance(spec, Conv):
        return _ConvLayer(spec, in_shape, rng, dtype)
    if isinstance(spec, Relu):
        return _ReluLayer(in_shape)
    if isinstance(spec, Sigmoid):
        return _SigmoidLayer(in_shape)
    if isinstance(spec, MaxPool):
        return _MaxPoolLayer(spec, in_shape)
    if isinstance(spec, Dropout):
        return _DropoutLayer(spec, in_shape)
    if isinstance(spec, ZeroPad):
        return _ZeroPadLayer(spec, in_shape)
    if isinstance(spec, Dense):
        return _DenseLayer(spec, in_shape, rng, dtype)
    raise DataError(f"unknown layer {spec!r}")


class Network:
    """A feed-forward stack of layers with owned parameters.

    Forward caches whatever each layer needs; backward must follow the
    matching forward. Gradients land in persistent per-layer buffers
    exposed through param_items().
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0,
                 dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = infer_shapes(spec)
        rng = np.random.default_rng(seed)
        self.layers: List[_Layer] = []
        cur = tuple(spec.input_shape)
        for lspec in spec.layers:
            layer = _build_layer(lspec, cur, rng, self.dtype)
            self.layers.append(layer)
            cur = layer.out_shape
        self.out_shape = cur

    def forward(self, x, mode: str = EVAL,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Run a batch (N, C, H, W) through the stack."""
        if mode not in (TRAIN, EVAL):
            raise DataError(f"unknown mode {mode!r}")
        a = _as_batch(x, "input")
        if tuple(a.shape[1:]) != tuple(self.spec.input_shape):
            raise DataError(
                f"input shape {a.shape[1:]} != spec {self.spec.input_shape}"
            )
        a = a.astype(self.dtype, copy=False)
        for layer in self.layers:
            a = layer.forward(a, mode, rng)
        return a

    def forward_one(self, x, mode: str = EVAL,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
        out = self.forward(np.asarray(x)[None], mode, rng)
        return out[0]

    def backward(self, grad_out, need_input_grad: bool = False):
        """Backpropagate loss gradient; fills the layer gradient buffers."""
        g = np.asarray(grad_out, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            need = need_input_grad or i > 0
            g = self.layers[i].backward(g, need)
        return g if need_input_grad else None

    def param_items(self) -> List[Tuple[str, np.ndarray, np.ndarray]]:
        items = []
        for idx, layer in enumerate(self.layers):
            for name, w, g in layer.param_items():
                items.append((f"layer{idx}.{name}", w, g))
        return items

    def param_count(self) -> int:
        return sum(w.size for _, w, _ in self.param_items())

    def zero_grads(self) -> None:
        for _, _, g in self.param_items():
            g[...] = 0


# ---------------------------------------------------------------------------
# gradient checking

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    failing_index: Optional[Tuple[str, int]]  # (param name, flat index)
    checked: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.failing_index is None


def finite_diff_report(items: Sequence[Tuple[str, np.ndarray, np.ndarray]],
                       loss_fn, h: float = 1e-5, tol: float = 1e-5,
                       max_checks: int = 2000,
                       rng: Optional[np.random.Generator] = None,
                       min_checks: int = 500) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    items: (name, param array, analytic grad array) triples; loss_fn()
    recomputes the scalar loss with the current parameter values. Checks
    every parameter up to max_checks, otherwise a seeded random subsample
    of at least min_checks. Relative error uses a 1e-3 floor so noise on
    near-zero derivatives cannot dominate.
    """
    total = sum(w.size for _, w, _ in items)
    if total == 0:
        return GradCheckReport(0.0, None, 0, tol)
    if rng is None:
        rng = np.random.default_rng(0)
    if total <= max_checks:
        picks = np.arange(total)
    else:
        picks = rng.choice(total, size=max(min_checks, 1), replace=False)
        picks.sort()

    bounds = np.cumsum([0] + [w.size for _, w, _ in items])
    worst = 0.0
    worst_idx = None
    for flat in picks:
        sel = int(np.searchsorted(bounds, flat, side="right") - 1)
        name, w, g = items[sel]
        local = int(flat - bounds[sel])
        idx = np.unravel_index(local, w.shape)
        orig = w[idx]
        w[idx] = orig + h
        lp = loss_fn()
        w[idx] = orig - h
        lm = loss_fn()
        w[idx] = orig
        numeric = (lp - lm) / (2.0 * h)
        analytic = float(g[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        if rel > worst:
            worst = rel
            worst_idx = (name, local)
    failing = worst_idx if worst > tol else None
    return GradCheckReport(worst, failing, len(picks), tol)


def grad_check(net: Network, x, target, loss: str = "recon", h: float = 1e-5,
               tol: float = 1e-5, max_checks: int = 2000,
               seed: int = 0) -> GradCheckReport:
    """Finite-difference check of a whole Network against one batch.

    Runs in the network's dtype (use float64 nets). Dropout layers must be
    inactive (rate 0) so the loss is deterministic; loss is the summed
    reconstruction error or, for nets with a scalar sigmoid output,
    binary cross-entropy against an integer label.
    """
    for lspec in net.spec.layers:
        if isinstance(lspec, Dropout) and lspec.rate != 0.0:
            raise DataError("grad_check requires dropout rate 0")
    xb = _as_batch(np.asarray(x)[None] if np.asarray(x).ndim == 3 else x)

    if loss == "recon":
        tgt = np.asarray(target, dtype=np.float64).reshape(xb.shape[0], -1)

        def loss_fn() -> float:
            out = net.forward(xb, EVAL)
            return float(np.sum((out.reshape(xb.shape[0], -1) - tgt) ** 2))

        out = net.forward(xb, EVAL)
        net.backward(2.0 * (out.reshape(xb.shape[0], -1) - tgt).reshape(out.shape))
    elif loss == "xent":
        label = int(target)

        def loss_fn() -> float:
            logit = float(net.forward(xb, EVAL).ravel()[0])
            p = min(max(_sigmoid(np.array([logit]))[0], PROB_CLAMP),
                    1.0 - PROB_CLAMP)
            return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))

        logit = net.forward(xb, EVAL)
        p = _sigmoid(logit.astype(np.float64))
        net.backward(np.full_like(logit, p.ravel()[0] - label))
    else:
        raise DataError(f"unknown loss {loss!r}")

    return finite_diff_report(net.param_items(), loss_fn, h=h, tol=tol,
                              max_checks=max_checks,
                              rng=np.random.default_rng(seed))
