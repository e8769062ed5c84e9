"""Minimal reverse-mode differentiation over a fixed operator set.

Tensors wrap float64 numpy arrays and record a backward closure per op.
The operator set is the smallest one covering a timestep-conditioned
convolutional denoiser and a paired-encoder contrastive objective:

    add, scale, matmul, transpose2d, reshape, conv3d (stride 1, same
    padding), silu, mean_square, l2_normalize_rows, cross_entropy_rows

Every operator has a finite-difference check in the test suite.
"""
from __future__ import annotations

import warnings
from contextlib import contextmanager

import numpy as np


class AutodiffError(RuntimeError):
    pass


class GraphCycleError(AutodiffError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise AutodiffError("backward() requires a scalar output")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 0 = visiting, 1 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 1
            order.append(node)
            continue
        st = state.get(id(node))
        if st == 1:
            continue
        if st == 0:
            raise GraphCycleError("cycle detected in computation graph")
        state[id(node)] = 0
        stack.append((node, True))
        for p in node._parents:
            if state.get(id(p)) != 1:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled:
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward direction."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(data, (a, b), backward)


def scale(x: Tensor, s) -> Tensor:
    """Elementwise scale by a python scalar or a scalar Tensor (learnable)."""
    x = _as_tensor(x)
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise AutodiffError("scale factor tensor must be scalar")
        data = x.data * float(s.data)

        def backward(g):
            x._accumulate(g * float(s.data))
            s._accumulate(np.asarray((g * x.data).sum()).reshape(s.shape))

        return _result(data, (x, s), backward)
    sval = float(s)
    data = x.data * sval

    def backward(g):
        x._accumulate(g * sval)

    return _result(data, (x,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _result(data, (a, b), backward)


def transpose2d(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise AutodiffError("transpose2d expects a 2-D operand")

    def backward(g):
        x._accumulate(g.T)

    return _result(x.data.T.copy(), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(data, (x,), backward)


def silu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # sign-split form keeps exp() in the underflow-only regime
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    sig = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    data = x.data * sig

    def backward(g):
        x._accumulate(g * sig * (1.0 + x.data * (1.0 - sig)))

    return _result(data, (x,), backward)


def mean_square(x: Tensor) -> Tensor:
    """Scalar mean of squared entries; the training loss reduction."""
    x = _as_tensor(x)
    n = x.data.size
    data = np.asarray((x.data ** 2).mean())

    def backward(g):
        x._accumulate((2.0 / n) * x.data * float(g))

    return _result(data, (x,), backward)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm (fused op with analytic gradient)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise AutodiffError("l2_normalize_rows expects a 2-D operand")
    norms = np.sqrt((x.data ** 2).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = x.data / norms

    def backward(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        x._accumulate((g - y * inner) / norms)

    return _result(y, (x,), backward)


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy of each row against an integer target index."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise AutodiffError("cross_entropy_rows expects a 2-D logits matrix")
    tgt = np.asarray(targets, dtype=np.int64)
    n, m = logits.data.shape
    if tgt.shape != (n,):
        raise AutodiffError(f"targets must have shape ({n},), got {tgt.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(n), tgt]
    data = np.asarray((lse - picked).mean())

    def backward(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), tgt] -= 1.0
        logits._accumulate(soft * (float(g) / n))

    return _result(data, (logits,), backward)


def _im2col(x: np.ndarray, kd: int, kh: int, kw: int) -> np.ndarray:
    """Patch matrix (N*P, kd*kh*kw*Cin) for a same-padded stride-1 window.

    Built by looping kernel offsets over a channels-last padded copy; far
    cheaper than transposing an 8-D sliding-window view.
    """
    n, cin, d, h, wd = x.shape
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))
    col = np.empty((n, d, h, wd, kd * kh * kw, cin))
    idx = 0
    for di in range(kd):
        for dj in range(kh):
            for dk in range(kw):
                col[:, :, :, :, idx, :] = xl[:, di : di + d, dj : dj + h, dk : dk + wd, :]
                idx += 1
    return col.reshape(n * d * h * wd, kd * kh * kw * cin)


def _conv3d_raw(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 same-padding correlation; returns (output, im2col matrix)."""
    n, cin, d, h, wd = x.shape
    cout, cin_w, kd, kh, kw = w.shape
    if cin != cin_w:
        raise AutodiffError(f"conv3d channel mismatch: input {cin}, kernel {cin_w}")
    if kd % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise AutodiffError("conv3d kernel dims must be odd for same padding")
    col = _im2col(x, kd, kh, kw)
    # kernel reordered to match the col layout: offsets major, channels minor
    w2 = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(-1, cout)
    out2 = col @ w2
    out = np.ascontiguousarray(out2.reshape(n, d, h, wd, cout).transpose(0, 4, 1, 2, 3))
    return out, col


def conv3d(x: Tensor, w: Tensor) -> Tensor:
    """3-D convolution, stride 1, same (zero) padding, odd kernel dims.

    x: (N, Cin, D, H, W); w: (Cout, Cin, kd, kh, kw) -> (N, Cout, D, H, W).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    out, col = _conv3d_raw(x.data, w.data)
    if not _grad_enabled:
        return _result(out, (), None)
    n, cout, d, h, wd = out.shape
    cin = x.data.shape[1]
    kd, kh, kw = w.data.shape[2:]

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(n * d * h * wd, cout)
        dw2 = col.T @ g2  # (k^3*cin, cout) in col layout
        w._accumulate(
            np.ascontiguousarray(
                dw2.reshape(kd, kh, kw, cin, cout).transpose(4, 3, 0, 1, 2)
            )
        )
        # dx: correlate the output gradient with the flipped, channel-swapped kernel
        w_flip = np.flip(w.data, axis=(2, 3, 4)).transpose(1, 0, 2, 3, 4)
        dx, _ = _conv3d_raw(g, np.ascontiguousarray(w_flip))
        x._accumulate(dx)

    return _result(out, (x, w), backward)


OPERATOR_SET = (
    "add",
    "scale",
    "matmul",
    "transpose2d",
    "reshape",
    "conv3d",
    "silu",
    "mean_square",
    "l2_normalize_rows",
    "cross_entropy_rows",
)


def backprop(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward() and collect one gradient per named parameter.

    Parameters unreached by the graph are reported via a warning and get a
    zero gradient.
    """
    for p in params.values():
        p.zero_grad()
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    unreached = []
    for name, p in params.items():
        if p.grad is None:
            unreached.append(name)
            grads[name] = np.zeros_like(p.data)
        else:
            grads[name] = p.grad
    if unreached:
        warnings.warn(f"parameters unreached by backprop (gradient 0): {unreached}")
    return grads


def grad_check(
    loss_fn,
    params: dict[str, Tensor],
    epsilon_fd: float = 1e-3,
    rng: np.random.Generator | None = None,
    max_entries_per_param: int = 24,
) -> float:
    """Max relative error between analytic gradients and central differences.

    For each parameter a random subset of entries is perturbed by
    +/- epsilon_fd. Relative error is |a - n| / max(|a|, |n|, 1e-2); the
    floor suppresses pure finite-difference noise on near-zero entries
    while leaving genuine disagreements visible.
    """
    if epsilon_fd <= 0:
        raise AutodiffError("epsilon_fd must be positive")
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    grads = backprop(loss, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_entries = flat.size
        if n_entries > max_entries_per_param:
            idx = rng.choice(n_entries, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n_entries)
        analytic = grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon_fd
            up = float(loss_fn().data)
            flat[i] = orig - epsilon_fd
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon_fd)
            a = float(analytic[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-2)
            worst = max(worst, rel)
    return worst
