"""Forward kernels for the layer zoo.

Convolution and pooling run on an im2col layout: sliding windows are
gathered once with ``numpy.lib.stride_tricks.sliding_window_view`` and
the contraction is a single BLAS matmul. Every public function takes and
returns :class:`~xraynet.tensor.Tensor` values, validates shapes up
front, and raises :class:`~xraynet.tensor.ShapeError` naming the
offending dimensions. Kernels preserve the input dtype (float32 or
float64) end to end.

Array-level helpers (prefixed ``_``) are shared with the autodiff layer,
which reuses them to build the matching backward passes.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ShapeError(message)


def _as_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


# ---------------------------------------------------------------------------
# im2col machinery


def _conv_out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """Gather conv patches: (N,C,H,W) -> (N, C*kh*kw, OH*OW), plus OH, OW."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c = x.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (N,C,OH,OW,kh,kw) -> (N,C,kh,kw,OH,OW) so the flat index matches a
    # row-major (C,kh,kw) weight reshape.
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return cols, oh, ow


def _col2im(
    grad_cols: np.ndarray,
    x_shape: tuple[int, ...],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
    oh: int,
    ow: int,
) -> np.ndarray:
    """Scatter-add the im2col gradient back onto the input layout."""
    n, c, h, w = x_shape
    g = grad_cols.reshape(n, c, kh, kw, oh, ow)
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=grad_cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g[:, :, i, j]
    if padding:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


def _check_conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    _require(stride >= 1, f"stride must be >= 1, got {stride}")
    _require(padding >= 0, f"padding must be >= 0, got {padding}")
    _require(
        h + 2 * padding >= kh and w + 2 * padding >= kw,
        f"window {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}",
    )
    return _conv_out_extent(h, kh, stride, padding), _conv_out_extent(w, kw, stride, padding)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate NCHW input with (Cout,Cin,kh,kw) filters, add bias."""
    x, weight, bias = _as_tensor(x, "x"), _as_tensor(weight, "weight"), _as_tensor(bias, "bias")
    _require(x.ndim == 4, f"conv2d input must be NCHW, got shape {x.shape}")
    _require(weight.ndim == 4, f"conv2d weight must be (Cout,Cin,kh,kw), got shape {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    _require(cin == cin_w, f"input channels {cin} != weight channels {cin_w}")
    _require(bias.shape == (cout,), f"bias shape {bias.shape} != ({cout},)")
    oh, ow = _check_conv_geometry(h, w, kh, kw, stride, padding)

    xv, wv, bv = x.numpy(), weight.numpy(), bias.numpy()
    w2d = wv.reshape(cout, cin * kh * kw)
    if kh == 1 and kw == 1 and padding == 0:
        xs = xv[:, :, ::stride, ::stride].reshape(n, cin, oh * ow)
        y = np.matmul(w2d, xs)
    else:
        cols, oh, ow = _im2col(xv, kh, kw, stride, padding)
        y = np.matmul(w2d, cols)
    y += bv[:, None]
    return Tensor._wrap(y.reshape(n, cout, oh, ow))


def _pool_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Max over k x k windows; optional zero-area padding filled with -inf."""
    x = _as_tensor(x, "x")
    _require(x.ndim == 4, f"maxpool2d input must be NCHW, got shape {x.shape}")
    _require(k >= 1, f"pool window must be >= 1, got {k}")
    _require(padding < k, f"padding {padding} must be < window {k}")
    n, c, h, w = x.shape
    _check_conv_geometry(h, w, k, k, stride, padding)
    xv = x.numpy()
    if padding:
        xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = _pool_windows(xv, k, stride)
    return Tensor._wrap(win.max(axis=(4, 5)))


def avgpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Mean over k x k windows, no padding."""
    x = _as_tensor(x, "x")
    _require(x.ndim == 4, f"avgpool2d input must be NCHW, got shape {x.shape}")
    _require(k >= 1, f"pool window must be >= 1, got {k}")
    n, c, h, w = x.shape
    _check_conv_geometry(h, w, k, k, stride, 0)
    win = _pool_windows(x.numpy(), k, stride)
    return Tensor._wrap(win.mean(axis=(4, 5), dtype=x.dtype))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the full spatial extent: (N,C,H,W) -> (N,C,1,1)."""
    x = _as_tensor(x, "x")
    _require(x.ndim == 4, f"global_avg_pool input must be NCHW, got shape {x.shape}")
    return Tensor._wrap(x.numpy().mean(axis=(2, 3), keepdims=True, dtype=x.dtype))


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormResult(NamedTuple):
    output: Tensor
    running_mean: Tensor
    running_var: Tensor


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> BatchNormResult:
    """Per-channel normalization over the (N,H,W) axes.

    Train mode normalizes with batch statistics (biased variance) and
    returns running stats advanced by an exponential moving average of
    the unbiased variance; eval mode normalizes with the supplied
    running stats and returns them unchanged.
    """
    x = _as_tensor(x, "x")
    _require(x.ndim == 4, f"batchnorm2d input must be NCHW, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    n, c, h, w = x.shape
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        _require(_as_tensor(t, name).shape == (c,), f"{name} shape {t.shape} != ({c},)")
    rv = running_var.numpy()
    if np.any(rv < 0):
        raise ValueError("running_var has negative entries")

    xv = x.numpy()
    gv, bv = gamma.numpy(), beta.numpy()
    if mode == "train":
        m = n * h * w
        _require(n >= 2, f"train-mode batchnorm needs batch size >= 2, got {n}")
        mean = xv.mean(axis=(0, 2, 3), dtype=x.dtype)
        var = xv.var(axis=(0, 2, 3), dtype=x.dtype)
        inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
        y = (xv - mean[:, None, None]) * (gv * inv)[:, None, None] + bv[:, None, None]
        var_unbiased = var * (m / (m - 1))
        new_mean = (1 - momentum) * running_mean.numpy() + momentum * mean
        new_var = (1 - momentum) * rv + momentum * var_unbiased
        return BatchNormResult(Tensor._wrap(y.astype(x.dtype, copy=False)), Tensor._wrap(new_mean.astype(x.dtype, copy=False)), Tensor._wrap(new_var.astype(x.dtype, copy=False)))
    inv = 1.0 / np.sqrt(rv + np.asarray(eps, dtype=x.dtype))
    y = (xv - running_mean.numpy()[:, None, None]) * (gv * inv)[:, None, None] + bv[:, None, None]
    return BatchNormResult(Tensor._wrap(y.astype(x.dtype, copy=False)), running_mean, running_var)


# ---------------------------------------------------------------------------
# concat, linear, softmax


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    _require(len(parts) >= 1, "concat_channels needs at least one part")
    parts = [_as_tensor(p, f"parts[{i}]") for i, p in enumerate(parts)]
    first = parts[0]
    for i, p in enumerate(parts):
        _require(p.ndim == 4, f"parts[{i}] must be NCHW, got shape {p.shape}")
        same = p.shape[0] == first.shape[0] and p.shape[2:] == first.shape[2:]
        _require(same, f"parts[{i}] shape {p.shape} incompatible with parts[0] shape {first.shape}")
    if len(parts) == 1:
        return parts[0]
    return Tensor._wrap(np.concatenate([p.numpy() for p in parts], axis=1))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of row vectors: (N,F) @ (K,F)^T + (K,)."""
    x, weight, bias = _as_tensor(x, "x"), _as_tensor(weight, "weight"), _as_tensor(bias, "bias")
    _require(x.ndim == 2, f"linear input must be (N,F), got shape {x.shape}")
    _require(weight.ndim == 2, f"linear weight must be (K,F), got shape {weight.shape}")
    n, f = x.shape
    k, f_w = weight.shape
    _require(f == f_w, f"input features {f} != weight features {f_w}")
    _require(bias.shape == (k,), f"bias shape {bias.shape} != ({k},)")
    return Tensor._wrap(x.numpy() @ weight.numpy().T + bias.numpy())


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of (N,K) logits, shift-stabilized."""
    x = _as_tensor(x, "x")
    _require(x.ndim == 2, f"softmax input must be (N,K), got shape {x.shape}")
    xv = x.numpy()
    z = xv - xv.max(axis=1, keepdims=True)
    e = np.exp(z)
    return Tensor._wrap(e / e.sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# activations

# Stable elementwise forms: every formula below stays finite for
# |x| <= 88 in float32 by routing exp through non-positive arguments.


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + e)
    return np.where(x >= 0, pos, 1.0 - pos)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def _act_sigmoid(x, alpha):
    return _sigmoid(x)


def _dact_sigmoid(x, alpha):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _act_tanh(x, alpha):
    return np.tanh(x)


def _dact_tanh(x, alpha):
    t = np.tanh(x)
    return 1.0 - t * t


def _act_relu(x, alpha):
    return np.maximum(x, 0)


def _dact_relu(x, alpha):
    return (x > 0).astype(x.dtype)


def _act_swish(x, alpha):
    return x * _sigmoid(x)


def _dact_swish(x, alpha):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _act_mish(x, alpha):
    return x * np.tanh(_softplus(x))


def _dact_mish(x, alpha):
    t = np.tanh(_softplus(x))
    return t + x * (1.0 - t * t) * _sigmoid(x)


def _act_softplus(x, alpha):
    return _softplus(x)


def _dact_softplus(x, alpha):
    return _sigmoid(x)


def _act_elu(x, alpha):
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0)))


def _dact_elu(x, alpha):
    return np.where(x > 0, 1.0, alpha * np.exp(np.minimum(x, 0))).astype(x.dtype)


_ACTIVATIONS = {
    "sigmoid": (_act_sigmoid, _dact_sigmoid),
    "tanh": (_act_tanh, _dact_tanh),
    "relu": (_act_relu, _dact_relu),
    "swish": (_act_swish, _dact_swish),
    "mish": (_act_mish, _dact_mish),
    "softplus": (_act_softplus, _dact_softplus),
    "elu": (_act_elu, _dact_elu),
}

ACTIVATION_KINDS = tuple(sorted(_ACTIVATIONS))


def _check_activation(kind: str, alpha: float) -> None:
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}; expected one of {', '.join(ACTIVATION_KINDS)}")
    if kind == "elu" and alpha <= 0:
        raise ValueError(f"elu alpha must be > 0, got {alpha}")


def activation(kind: str, x: Tensor, alpha: float = 1.0) -> Tensor:
    """Apply a named elementwise nonlinearity."""
    x = _as_tensor(x, "x")
    _check_activation(kind, alpha)
    fn, _ = _ACTIVATIONS[kind]
    return Tensor._wrap(fn(x.numpy(), alpha).astype(x.dtype, copy=False))


def activation_grad(kind: str, x: Tensor, alpha: float = 1.0) -> Tensor:
    """Elementwise derivative of the named nonlinearity at x."""
    x = _as_tensor(x, "x")
    _check_activation(kind, alpha)
    _, dfn = _ACTIVATIONS[kind]
    return Tensor._wrap(dfn(x.numpy(), alpha).astype(x.dtype, copy=False))
