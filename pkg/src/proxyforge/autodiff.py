"""Minimal reverse-mode autodiff over dense numpy tensors.

Define-by-run: every op builds a ``Node`` holding the forward value and
vector-Jacobian closures back to its parents. ``backward`` toposorts the
graph, seeds the scalar loss with 1, and accumulates adjoints into the
leaf ``Parameter`` objects. Training runs in float32; gradient checking
builds the same graphs in float64 (the dtype follows the input arrays).

Feature maps are laid out NCHW; label maps NHW.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import IGNORE_LABEL

LEAKY_SLOPE = 0.2


@dataclass
class Parameter:
    """Named trainable tensor with gradient and optimizer state."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)


class Node:
    __slots__ = ("value", "parents", "vjps", "grad", "param")

    def __init__(self, value, parents=(), vjps=(), param=None):
        self.value = np.asarray(value)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.grad = None
        self.param = param

    def __add__(self, other):
        return add(self, other)


def constant(value) -> Node:
    return Node(np.asarray(value))


def param_node(p: Parameter) -> Node:
    return Node(p.value, param=p)


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, iter(root.parents))]
    seen.add(id(root))
    while stack:
        node, it = stack[-1]
        child = next(it, None)
        if child is None:
            stack.pop()
            order.append(node)
        elif id(child) not in seen:
            seen.add(id(child))
            stack.append((child, iter(child.parents)))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable Parameter.

    Parameter gradients are zeroed first, so each backward pass reports
    only its own adjoints.
    """
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss node")
    order = _topo_order(loss)
    for n in order:
        n.grad = None
        if n.param is not None:
            n.param.grad = np.zeros_like(n.param.value)
    loss.grad = np.ones_like(loss.value)
    for n in reversed(order):
        if n.grad is None:
            continue
        for parent, vjp in zip(n.parents, n.vjps):
            g = vjp(n.grad)
            parent.grad = g if parent.grad is None else parent.grad + g
    for n in order:
        if n.param is not None and n.grad is not None:
            n.param.grad = n.param.grad + n.grad


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ValueError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Node(a.value + b.value, (a, b), (lambda g: g, lambda g: g))


def scale(a: Node, c: float) -> Node:
    return Node(a.value * c, (a,), (lambda g: g * c,))


def add_scaled(terms: list[tuple[Node, float]]) -> Node:
    """Weighted sum of scalar loss nodes."""
    value = sum(c * t.value for t, c in terms)
    return Node(
        value,
        tuple(t for t, _ in terms),
        tuple((lambda g, c=c: g * c) for _, c in terms),
    )


def concat_channels(a: Node, b: Node) -> Node:
    ca = a.value.shape[1]
    out = np.concatenate([a.value, b.value], axis=1)
    return Node(
        out,
        (a, b),
        (lambda g: g[:, :ca], lambda g: g[:, ca:]),
    )


def leaky_relu(x: Node, slope: float = LEAKY_SLOPE) -> Node:
    # subgradient at exactly 0 takes the positive branch
    mask = x.value >= 0
    factor = np.where(mask, 1.0, slope)
    return Node(x.value * factor, (x,), (lambda g: g * factor,))


# ---------------------------------------------------------------------------
# convolution


def _conv_out_extent(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    eff = dilation * (k - 1) + 1
    out = (n + 2 * pad - eff) // stride + 1
    if out < 1:
        raise ValueError(f"kernel does not fit: extent {n}, kernel {k}, pad {pad}")
    return out


def _im2col(xp: np.ndarray, kh, kw, stride, dilation, oh, ow) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)


def conv2d(
    x: Node,
    w: Node,
    b: Node | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Node:
    """Cross-correlation with zero padding. x: (N,C,H,W); w: (O,C,kh,kw)."""
    n, c, h, wdt = x.value.shape
    o, cw, kh, kw = w.value.shape
    if c != cw:
        raise ValueError(f"channel mismatch: input {c}, kernel {cw}")
    oh = _conv_out_extent(h, kh, stride, padding, dilation)
    ow = _conv_out_extent(wdt, kw, stride, padding, dilation)
    xp = (
        np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.value
    )
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, dilation, oh, ow))
    w2 = w.value.reshape(o, -1)
    out = np.matmul(w2, cols).reshape(n, o, oh, ow)
    if b is not None:
        out = out + b.value.reshape(1, o, 1, 1)

    def vjp_x(g):
        g2 = g.reshape(n, o, oh * ow)
        dcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, oh, ow)
        dxp = np.zeros(
            (n, c, h + 2 * padding, wdt + 2 * padding), dtype=x.value.dtype
        )
        for i in range(kh):
            for j in range(kw):
                dxp[
                    :,
                    :,
                    i * dilation : i * dilation + stride * oh : stride,
                    j * dilation : j * dilation + stride * ow : stride,
                ] += dcols[:, :, i, j]
        if padding:
            return dxp[:, :, padding:-padding, padding:-padding]
        return dxp

    def vjp_w(g):
        g2 = g.reshape(n, o, oh * ow)
        dw = np.einsum("nop,ncp->oc", g2, cols, optimize=True)
        return dw.reshape(o, c, kh, kw)

    parents = [x, w]
    vjps = [vjp_x, vjp_w]
    if b is not None:
        parents.append(b)
        vjps.append(lambda g: g.sum(axis=(0, 2, 3)).reshape(b.value.shape))
    return Node(out, parents, vjps)


def avg_pool(x: Node, window: int, stride: int | None = None) -> Node:
    """Mean pooling; gradient spreads 1/window^2 back to each input cell."""
    stride = stride or window
    n, c, h, w = x.value.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    sn, sc, sh, sw = x.value.strides
    view = np.lib.stride_tricks.as_strided(
        x.value,
        shape=(n, c, oh, ow, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    out = view.mean(axis=(4, 5))

    def vjp(g):
        dx = np.zeros_like(x.value)
        gw = g / (window * window)
        for i in range(window):
            for j in range(window):
                dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gw
        return dx

    return Node(out, (x,), (vjp,))


# ---------------------------------------------------------------------------
# bilinear upsampling (separable corner-aligned interpolation matrices)


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    coords = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(coords.astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def bilinear_upsample(x: Node, out_h: int, out_w: int) -> Node:
    """Differentiable corner-aligned bilinear resize of (N,C,h,w) maps."""
    n, c, h, w = x.value.shape
    ay = _interp_matrix(out_h, h, x.value.dtype)
    ax = _interp_matrix(out_w, w, x.value.dtype)
    out = np.einsum("Hh,nchw,Ww->ncHW", ay, x.value, ax, optimize=True)

    def vjp(g):
        return np.einsum("Hh,ncHW,Ww->nchw", ay, g, ax, optimize=True)

    return Node(out, (x,), (vjp,))


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits: Node, targets: np.ndarray) -> tuple[Node, np.ndarray]:
    """Mean pixel cross-entropy with ignore value 255.

    logits: (N,L,H,W); targets: (N,H,W) uint8. Returns the scalar loss
    node and the softmax probabilities (same layout as the logits).
    """
    z = logits.value
    n, l, h, w = z.shape
    if targets.shape != (n, h, w):
        raise ValueError(f"target shape {targets.shape} != {(n, h, w)}")
    valid = targets != IGNORE_LABEL
    count = int(valid.sum())
    if count == 0:
        raise ValueError("all pixels carry the ignore value")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    tclip = np.where(valid, targets, 0).astype(np.int64)
    picked = np.take_along_axis(probs, tclip[:, None], axis=1)[:, 0]
    logp = np.log(np.maximum(picked, np.finfo(z.dtype).tiny))
    loss = -(logp * valid).sum() / count

    def vjp(g):
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, tclip[:, None], 1.0, axis=1)
        d = (probs - onehot) * valid[:, None] / count
        return g.reshape(()) * d

    return Node(np.asarray(loss, dtype=z.dtype), (logits,), (vjp,)), probs


def sigmoid_bce(logits: Node, domain_label: float) -> Node:
    """Mean binary cross-entropy over all patch logits, stabilized in
    logit space: max(z,0) - z*y + log(1 + exp(-|z|))."""
    z = logits.value
    y = float(domain_label)
    zsize = z.size
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        return g.reshape(()) * (sig - y) / zsize

    return Node(np.asarray(loss, dtype=z.dtype), (logits,), (vjp,))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# optimizers


def sgd_momentum_step(
    params: list[Parameter],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> None:
    for p in params:
        g = p.grad + weight_decay * p.value
        buf = p.state.get("momentum")
        buf = g if buf is None else momentum * buf + g
        p.state["momentum"] = buf
        p.value -= lr * buf


def adam_step(
    params: list[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    for p in params:
        t = p.state.get("t", 0) + 1
        m = p.state.get("m", np.zeros_like(p.value))
        v = p.state.get("v", np.zeros_like(p.value))
        m = beta1 * m + (1 - beta1) * p.grad
        v = beta2 * v + (1 - beta2) * p.grad**2
        p.state.update(t=t, m=m, v=v)
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.value -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn,
    params: list[Parameter],
    eps: float = 1e-4,
    max_coords: int = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between analytic and central-difference grads.

    ``loss_fn`` rebuilds the scalar loss graph from current parameter
    values; parameters should hold float64 values for the stated
    tolerances to be reachable. Coordinates are sampled for big tensors.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        # a parameter absent from the current graph keeps a zero adjoint
        p.grad = np.zeros_like(p.value)
    loss = loss_fn()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        coords = (
            np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        )
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().value)
            flat[i] = orig - eps
            dn = float(loss_fn().value)
            flat[i] = orig
            numeric = (up - dn) / (2 * eps)
            ana = float(analytic[p.name].reshape(-1)[i])
            # the floor keeps central-difference cancellation noise
            # (~eps_machine * |loss| / eps) from dominating coordinates
            # whose true gradient is essentially zero
            denom = max(abs(numeric), abs(ana), 1e-5)
            worst = max(worst, abs(numeric - ana) / denom)
    return worst
