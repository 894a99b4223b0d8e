"""Reverse-mode automatic differentiation over the tensor kernels.

Each traced operation returns a :class:`Node` holding its output value,
its parent nodes, and a closure that maps the output gradient to parent
gradient contributions. :func:`backward` topologically orders the graph
reachable from a scalar loss, seeds it with 1.0, and accumulates
gradients by addition, so fan-out (an activation consumed by several
later layers, as inside a dense block) sums naturally.

Backward passes reuse the array-level helpers from :mod:`xraynet.ops`
(im2col / col2im, activation derivative table) so forward and backward
share one definition of every kernel's geometry.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


class Parameter:
    """A named trainable (or buffer) tensor with a gradient accumulator."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name: str, value: Tensor, trainable: bool = True):
        if not isinstance(value, Tensor):
            raise TypeError("Parameter value must be a Tensor")
        self.name = name
        self.value = value
        self.trainable = trainable
        self.grad = np.zeros(value.shape, dtype=value.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.value.shape, dtype=self.value.dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


class Node:
    """One traced value: output tensor, parents, and a backward closure."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "param")

    def __init__(
        self,
        value: Tensor,
        parents: tuple["Node", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        param: Parameter | None = None,
    ):
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.value.shape, dtype=self.value.dtype)
        self.grad += g


def leaf(value: Tensor) -> Node:
    """An input node; it receives gradients but owns no parameter."""
    if not isinstance(value, Tensor):
        raise TypeError("leaf value must be a Tensor")
    return Node(value)


def param_node(p: Parameter) -> Node:
    return Node(p.value, param=p)


def _topo_order(root: Node) -> list[Node]:
    # Iterative post-order DFS; recursion would overflow on deep graphs.
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, accumulate: bool = True) -> dict[str, Tensor]:
    """Run the reverse sweep from a scalar loss.

    Returns the gradient for every parameter reachable from the loss,
    keyed by parameter name. With ``accumulate`` (the default) the same
    gradients are also added into each ``Parameter.grad`` buffer.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    loss.add_grad(np.ones(loss.value.shape, dtype=loss.value.dtype))
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    grads: dict[str, Tensor] = {}
    for node in order:
        if node.param is None:
            continue
        g = node.grad if node.grad is not None else np.zeros(node.value.shape, dtype=node.value.dtype)
        if node.param.name in grads:
            g = grads[node.param.name].numpy() + g
        grads[node.param.name] = Tensor(g, dtype=g.dtype)
    if accumulate:
        for node in order:
            if node.param is not None and node.grad is not None:
                node.param.grad += node.grad.astype(node.param.grad.dtype, copy=False)
    return grads


# ---------------------------------------------------------------------------
# traced operations


def conv2d(x: Node, weight: Node, bias: Node, stride: int = 1, padding: int = 0) -> Node:
    out = ops.conv2d(x.value, weight.value, bias.value, stride, padding)
    n, cout, oh, ow = out.shape
    _, cin, kh, kw = weight.value.shape
    xv, wv = x.value.numpy(), weight.value.numpy()
    w2d = wv.reshape(cout, cin * kh * kw)

    def bwd(g: np.ndarray) -> None:
        g2 = g.reshape(n, cout, oh * ow)
        bias.add_grad(g.sum(axis=(0, 2, 3)))
        if kh == 1 and kw == 1 and padding == 0:
            cols = xv[:, :, ::stride, ::stride].reshape(n, cin, oh * ow)
            weight.add_grad(np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wv.shape))
            dcols = np.matmul(w2d.T, g2).reshape(n, cin, oh, ow)
            dx = np.zeros(xv.shape, dtype=g.dtype)
            dx[:, :, ::stride, ::stride] = dcols
            x.add_grad(dx)
            return
        cols, _, _ = ops._im2col(xv, kh, kw, stride, padding)
        weight.add_grad(np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wv.shape))
        dcols = np.matmul(w2d.T, g2)
        x.add_grad(ops._col2im(dcols, xv.shape, kh, kw, stride, padding, oh, ow))

    return Node(out, (x, weight, bias), bwd)


def linear(x: Node, weight: Node, bias: Node) -> Node:
    out = ops.linear(x.value, weight.value, bias.value)
    xv, wv = x.value.numpy(), weight.value.numpy()

    def bwd(g: np.ndarray) -> None:
        x.add_grad(g @ wv)
        weight.add_grad(g.T @ xv)
        bias.add_grad(g.sum(axis=0))

    return Node(out, (x, weight, bias), bwd)


def maxpool2d(x: Node, k: int, stride: int, padding: int = 0) -> Node:
    out = ops.maxpool2d(x.value, k, stride, padding)
    n, c, oh, ow = out.shape
    _, _, h, w = x.value.shape

    def bwd(g: np.ndarray) -> None:
        xv = x.value.numpy()
        if padding:
            xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
        hp, wp = xv.shape[2], xv.shape[3]
        win = ops._pool_windows(xv, k, stride)
        # argmax over the row-major flattened window = first maximum wins ties
        am = win.reshape(n, c, oh, ow, k * k).argmax(axis=4)
        di, dj = am // k, am % k
        rows = np.arange(oh)[None, None, :, None] * stride + di
        cols = np.arange(ow)[None, None, None, :] * stride + dj
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        flat = ((ni * c + ci) * hp + rows) * wp + cols
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        np.add.at(dxp.ravel(), flat.ravel(), g.ravel())
        if padding:
            dxp = dxp[:, :, padding : padding + h, padding : padding + w]
        x.add_grad(dxp)

    return Node(out, (x,), bwd)


def avgpool2d(x: Node, k: int, stride: int) -> Node:
    out = ops.avgpool2d(x.value, k, stride)
    n, c, oh, ow = out.shape

    def bwd(g: np.ndarray) -> None:
        share = g / (k * k)
        dx = np.zeros(x.value.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += share
        x.add_grad(dx)

    return Node(out, (x,), bwd)


def global_avg_pool(x: Node) -> Node:
    out = ops.global_avg_pool(x.value)
    _, _, h, w = x.value.shape

    def bwd(g: np.ndarray) -> None:
        x.add_grad(np.broadcast_to(g / (h * w), x.value.shape).copy())

    return Node(out, (x,), bwd)


def batchnorm2d(
    x: Node,
    gamma: Node,
    beta: Node,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[Node, Tensor, Tensor]:
    """Traced batchnorm; running stats are plain buffers, not traced."""
    res = ops.batchnorm2d(x.value, gamma.value, beta.value, running_mean, running_var, mode, momentum, eps)
    xv = x.value.numpy()
    gv = gamma.value.numpy()
    dt = x.value.dtype
    if mode == "train":
        mean = xv.mean(axis=(0, 2, 3), dtype=dt)
        var = xv.var(axis=(0, 2, 3), dtype=dt)
    else:
        mean = running_mean.numpy().astype(dt, copy=False)
        var = running_var.numpy().astype(dt, copy=False)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=dt))

    def bwd(g: np.ndarray) -> None:
        xhat = (xv - mean[:, None, None]) * inv[:, None, None]
        beta.add_grad(g.sum(axis=(0, 2, 3)))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        gamma.add_grad(dgamma)
        if mode == "train":
            m = xv.shape[0] * xv.shape[2] * xv.shape[3]
            dsum = g.sum(axis=(0, 2, 3))
            coeff = (gv * inv) / m
            x.add_grad(coeff[:, None, None] * (m * g - dsum[:, None, None] - xhat * dgamma[:, None, None]))
        else:
            x.add_grad(g * (gv * inv)[:, None, None])

    node = Node(res.output, (x, gamma, beta), bwd)
    return node, res.running_mean, res.running_var


def concat_channels(parts: Sequence[Node]) -> Node:
    out = ops.concat_channels([p.value for p in parts])
    if len(parts) == 1:
        return parts[0]
    widths = [p.value.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def bwd(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            p.add_grad(g[:, lo:hi])

    return Node(out, tuple(parts), bwd)


def activation(kind: str, x: Node, alpha: float = 1.0) -> Node:
    out = ops.activation(kind, x.value, alpha)

    def bwd(g: np.ndarray) -> None:
        x.add_grad(g * ops.activation_grad(kind, x.value, alpha).numpy())

    return Node(out, (x,), bwd)


def flatten(x: Node) -> Node:
    n = x.value.shape[0]
    out = Tensor._wrap(x.value.numpy().reshape(n, -1).copy())

    def bwd(g: np.ndarray) -> None:
        x.add_grad(g.reshape(x.value.shape))

    return Node(out, (x,), bwd)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add needs matching shapes, got {a.value.shape} and {b.value.shape}")
    out = Tensor._wrap(a.value.numpy() + b.value.numpy())

    def bwd(g: np.ndarray) -> None:
        a.add_grad(g)
        b.add_grad(g)

    return Node(out, (a, b), bwd)


def mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul needs matching shapes, got {a.value.shape} and {b.value.shape}")
    out = Tensor._wrap(a.value.numpy() * b.value.numpy())

    def bwd(g: np.ndarray) -> None:
        a.add_grad(g * b.value.numpy())
        b.add_grad(g * a.value.numpy())

    return Node(out, (a, b), bwd)


def sum_all(x: Node) -> Node:
    out = Tensor._wrap(np.asarray([x.value.numpy().sum()], dtype=x.value.dtype))

    def bwd(g: np.ndarray) -> None:
        x.add_grad(np.full(x.value.shape, g.reshape(-1)[0], dtype=x.value.dtype))

    return Node(out, (x,), bwd)


def take(x: Node, index: tuple[int, ...]) -> Node:
    """Select one scalar element of x as a (1,)-shaped node."""
    val = x.value.numpy()[index]
    out = Tensor._wrap(np.asarray([val], dtype=x.value.dtype))

    def bwd(g: np.ndarray) -> None:
        dx = np.zeros(x.value.shape, dtype=x.value.dtype)
        dx[index] = g.reshape(-1)[0]
        x.add_grad(dx)

    return Node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(
    build: Callable[[list[Node]], Node],
    input_shapes: Sequence[tuple[int, ...]],
    eps: float = 1e-4,
    seed: int = 0,
    min_abs: float = 0.0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``build`` maps a list of float64 leaf nodes (one per entry of
    ``input_shapes``) to a scalar node. Inputs are drawn uniformly from
    [-2, 2]; with ``min_abs`` > 0 every coordinate's magnitude is pushed
    to at least ``min_abs``, keeping kinked functions (relu, elu, maxpool
    ties) away from their non-differentiable points. Returns the maximum
    relative error |analytic - numeric| / max(1, |analytic|).
    """
    rng = np.random.default_rng(seed)
    arrays: list[np.ndarray] = []
    for shp in input_shapes:
        a = rng.uniform(-2.0, 2.0, size=shp)
        if min_abs > 0.0:
            sign = np.where(a >= 0.0, 1.0, -1.0)
            a = sign * (min_abs + (2.0 - min_abs) * np.abs(a) / 2.0)
        arrays.append(a)

    leaves = [leaf(Tensor(a, dtype=np.float64)) for a in arrays]
    loss = build(leaves)
    if loss.value.size != 1:
        raise ShapeError(f"grad_check build must yield a scalar, got shape {loss.value.shape}")
    backward(loss, accumulate=False)

    def run(perturbed: list[np.ndarray]) -> float:
        fresh = [leaf(Tensor(a, dtype=np.float64)) for a in perturbed]
        return build(fresh).value.item()

    worst = 0.0
    for ti, base in enumerate(arrays):
        analytic = leaves[ti].grad
        if analytic is None:
            analytic = np.zeros(base.shape, dtype=np.float64)
        flat = base.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            work = [a.copy() for a in arrays]
            work[ti].reshape(-1)[idx] = orig + eps
            f_plus = run(work)
            work[ti].reshape(-1)[idx] = orig - eps
            f_minus = run(work)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a_val = float(analytic.reshape(-1)[idx])
            rel = abs(a_val - numeric) / max(1.0, abs(a_val))
            worst = max(worst, rel)
    return worst
