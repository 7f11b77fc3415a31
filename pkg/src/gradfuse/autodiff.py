"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Provides exactly the operations the fusion network and its losses need:
guarded elementwise arithmetic, 2-D convolution with same-size zero padding,
dense layers, global average pooling, channel concatenation, padding /
cropping, windowed box sums, and the relu / sigmoid nonlinearities.

Executed operations are recorded on an explicit :class:`Tape`; calling
``tape.backward(loss)`` replays the recorded backward rules in reverse order
and accumulates gradients into every reachable tensor with
``requires_grad=True``. With no tape active every operation is a plain
forward computation (inference mode).
"""

from __future__ import annotations

import numpy as np

DIV_EPS = 1e-12   # denominator guard for elementwise division
SQRT_EPS = 1e-12  # argument guard inside the sqrt backward rule


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # elementwise operator sugar; scalars are python floats/ints
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return sum_all(self)


_STACK: list["Tape"] = []


def _active() -> "Tape | None":
    return _STACK[-1] if _STACK else None


class Tape:
    """Ordered record of executed operations with their backward rules.

    Replaying the rules in reverse order populates ``grad`` for every
    ``requires_grad`` tensor reachable from the loss. A tape is single use:
    ``backward`` consumes the record.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STACK.pop()
        return False

    def __len__(self):
        return len(self._ops)

    def _record(self, out: Tensor, rule) -> None:
        self._ops.append((out, rule))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, rule in reversed(self._ops):
            g = out.grad
            if g is None:
                continue  # branch that does not reach the loss
            rule(g)
            out.grad = None  # op outputs are intermediates; free as we go
        self._ops.clear()


def _make(data, *inputs) -> Tensor:
    """Wrap an op result; it participates in differentiation only while a
    tape is active and some input requires grad."""
    tape = _active()
    rg = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = rg
    out.grad = None
    return out


def _record(out: Tensor, rule) -> Tensor:
    if out.requires_grad:
        _active()._record(out, rule)
    return out


def _acc(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.full_like(ref.data, float(value)))


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise ops (same-shape tensors, or tensor op python scalar)
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        out = _make(a.data + s, a)

        def rule(g):
            _acc(a, g)

        return _record(out, rule)
    _check_same_shape(a, b, "add")
    out = _make(a.data + b.data, a, b)

    def rule(g):
        _acc(a, g)
        _acc(b, g)

    return _record(out, rule)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape(a, b, "sub")
    out = _make(a.data - b.data, a, b)

    def rule(g):
        _acc(a, g)
        _acc(b, -g)

    return _record(out, rule)


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, a)

    def rule(g):
        _acc(a, -g)

    return _record(out, rule)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        out = _make(a.data * s, a)

        def rule(g):
            _acc(a, g * s)

        return _record(out, rule)
    _check_same_shape(a, b, "mul")
    out = _make(a.data * b.data, a, b)

    def rule(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _record(out, rule)


def _safe_den(d: np.ndarray) -> np.ndarray:
    # sign-preserving denominator guard; sign(0) treated as +.
    s = np.where(np.signbit(d), -1.0, 1.0)
    return s * np.maximum(np.abs(d), DIV_EPS)


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    _check_same_shape(a, b, "div")
    den = _safe_den(b.data)
    out = _make(a.data / den, a, b)

    def rule(g):
        _acc(a, g / den)
        _acc(b, -g * a.data / (den * den))

    return _record(out, rule)


def square(a: Tensor) -> Tensor:
    out = _make(a.data * a.data, a)

    def rule(g):
        _acc(a, g * (2.0 * a.data))

    return _record(out, rule)


def sqrt(a: Tensor) -> Tensor:
    val = np.sqrt(a.data)
    out = _make(val, a)

    def rule(g):
        _acc(a, g / (2.0 * np.sqrt(np.maximum(a.data, SQRT_EPS))))

    return _record(out, rule)


def absolute(a: Tensor) -> Tensor:
    out = _make(np.abs(a.data), a)

    def rule(g):
        _acc(a, g * np.sign(a.data))  # subgradient 0 at 0

    return _record(out, rule)


def arctan(a: Tensor) -> Tensor:
    out = _make(np.arctan(a.data), a)

    def rule(g):
        _acc(a, g / (1.0 + a.data * a.data))

    return _record(out, rule)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = _make(np.clip(a.data, lo, hi), a)

    def rule(g):
        _acc(a, g * ((a.data > lo) & (a.data < hi)))

    return _record(out, rule)


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), a)

    def rule(g):
        _acc(a, g * (a.data > 0))

    return _record(out, rule)


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic with the exact identity s(z) + s(-z) == 1.

    The value for negative z is computed as 1 - s(|z|); since s(|z|) lies in
    [0.5, 1] that subtraction is exact in floating point.
    """
    u = 1.0 / (1.0 + np.exp(-np.abs(z)))
    return np.where(z >= 0, u, 1.0 - u)


def sigmoid(a: Tensor) -> Tensor:
    y = stable_sigmoid(a.data)
    out = _make(y, a)

    def rule(g):
        _acc(a, g * (y * (1.0 - y)))

    return _record(out, rule)


# ---------------------------------------------------------------------------
# reductions and structural ops
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    out = _make(np.asarray(a.data.sum()), a)

    def rule(g):
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _record(out, rule)


def sum_channels(a: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,1,H,W], summing over channels."""
    if a.data.ndim != 4:
        raise ShapeError(f"sum_channels expects a 4-d tensor, got shape {a.data.shape}")
    out = _make(a.data.sum(axis=1, keepdims=True), a)

    def rule(g):
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _record(out, rule)


def concat_channels(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    base = xs[0].data.shape
    for i, t in enumerate(xs[1:], 1):
        s = t.data.shape
        if len(s) != 4 or len(base) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise ShapeError(
                f"concat_channels: tensor 0 has shape {base}, tensor {i} has shape {s}"
            )
    out = _make(np.concatenate([t.data for t in xs], axis=1), *xs)
    offsets = np.cumsum([0] + [t.data.shape[1] for t in xs])

    def rule(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _acc(t, g[:, lo:hi])

    return _record(out, rule)


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Rescale [B,C,H,W] per channel by a [B,C] gate."""
    B, C = x.data.shape[:2]
    if gate.data.shape != (B, C):
        raise ShapeError(
            f"scale_channels: gate shape {gate.data.shape} does not match (B,C)=({B},{C})"
        )
    gx = gate.data[:, :, None, None]
    out = _make(x.data * gx, x, gate)

    def rule(g):
        _acc(x, g * gx)
        _acc(gate, (g * x.data).sum(axis=(2, 3)))

    return _record(out, rule)


def scale_spatial(x: Tensor, gate: Tensor) -> Tensor:
    """Rescale [B,C,H,W] per pixel by a [B,1,H,W] gate shared across channels."""
    B, _, H, W = x.data.shape
    if gate.data.shape != (B, 1, H, W):
        raise ShapeError(
            f"scale_spatial: gate shape {gate.data.shape} does not match (B,1,H,W)=({B},1,{H},{W})"
        )
    out = _make(x.data * gate.data, x, gate)

    def rule(g):
        _acc(x, g * gate.data)
        _acc(gate, (g * x.data).sum(axis=1, keepdims=True))

    return _record(out, rule)


# ---------------------------------------------------------------------------
# padding, cropping, box sums
# ---------------------------------------------------------------------------

def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "zero") -> Tensor:
    """Pad the two trailing axes by (top, bottom, left, right)."""
    t, b, l, r = pads
    if min(pads) < 0:
        raise ShapeError(f"pad2d: negative pad {pads}")
    width = [(0, 0)] * (x.data.ndim - 2) + [(t, b), (l, r)]
    if mode == "zero":
        data = np.pad(x.data, width)
    elif mode == "replicate":
        data = np.pad(x.data, width, mode="edge")
    else:
        raise ValueError(f"pad2d: unknown mode {mode!r}")
    out = _make(data, x)
    H, W = x.data.shape[-2:]

    def rule(g):
        if mode == "zero":
            _acc(x, g[..., t:t + H, l:l + W])
        else:
            rows = g[..., t:t + H, :].copy()
            if t:
                rows[..., 0, :] += g[..., :t, :].sum(axis=-2)
            if b:
                rows[..., -1, :] += g[..., t + H:, :].sum(axis=-2)
            core = rows[..., :, l:l + W].copy()
            if l:
                core[..., :, 0] += rows[..., :, :l].sum(axis=-1)
            if r:
                core[..., :, -1] += rows[..., :, l + W:].sum(axis=-1)
            _acc(x, core)

    return _record(out, rule)


def crop2d(x: Tensor, crops: tuple[int, int, int, int]) -> Tensor:
    """Remove (top, bottom, left, right) rows/columns from the trailing axes."""
    t, b, l, r = crops
    H, W = x.data.shape[-2:]
    if t + b >= H or l + r >= W:
        raise ShapeError(f"crop2d: crops {crops} exhaust shape {x.data.shape}")
    out = _make(x.data[..., t:H - b, l:W - r], x)

    def rule(g):
        width = [(0, 0)] * (x.data.ndim - 2) + [(t, b), (l, r)]
        _acc(x, np.pad(g, width))

    return _record(out, rule)


def _box_sum_valid(arr: np.ndarray, k: int) -> np.ndarray:
    # integral-image windowed sum; output spatial dims shrink by k-1
    B, C, H, W = arr.shape
    ii = np.zeros((B, C, H + 1, W + 1))
    ii[:, :, 1:, 1:] = arr
    ii = ii.cumsum(axis=2).cumsum(axis=3)
    return (
        ii[:, :, k:, k:]
        - ii[:, :, :-k, k:]
        - ii[:, :, k:, :-k]
        + ii[:, :, :-k, :-k]
    )


def box_sum_valid(x: Tensor, k: int) -> Tensor:
    """Sum over every k-by-k window of a [B,C,H,W] tensor (valid placement)."""
    if x.data.ndim != 4:
        raise ShapeError(f"box_sum_valid expects 4-d input, got shape {x.data.shape}")
    H, W = x.data.shape[2:]
    if k < 1 or k > H or k > W:
        raise ShapeError(f"box_sum_valid: window {k} does not fit spatial dims ({H},{W})")
    out = _make(_box_sum_valid(x.data, k), x)

    def rule(g):
        gp = np.pad(g, [(0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)])
        _acc(x, _box_sum_valid(gp, k))

    return _record(out, rule)


# ---------------------------------------------------------------------------
# convolution and dense layers
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, H: int, W: int) -> np.ndarray:
    """[B,C,H+k-1,W+k-1] -> [B, C*k*k, H*W] patch matrix (channel-major taps)."""
    B, C = xp.shape[:2]
    cols = np.empty((B, C, k * k, H, W))
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = xp[:, :, i:i + H, j:j + W]
    return cols.reshape(B, C * k * k, H * W)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2-D convolution with same-size zero padding and odd square kernels.

    x: [B,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] -> [B,Cout,H,W].
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d: need 4-d input and weight, got {x.data.shape} and {w.data.shape}"
        )
    B, Cin, H, W = x.data.shape
    Cout, Cw, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd and square, got {kh}x{kw}")
    if Cw != Cin:
        raise ShapeError(f"conv2d: input has {Cin} channels but weight expects {Cw}")
    if b.data.shape != (Cout,):
        raise ShapeError(f"conv2d: bias shape {b.data.shape} does not match Cout={Cout}")
    p = kh // 2
    xp = np.pad(x.data, [(0, 0), (0, 0), (p, p), (p, p)])
    cols = _im2col(xp, kh, H, W)
    w2 = w.data.reshape(Cout, Cin * kh * kh)
    out_data = np.matmul(w2, cols) + b.data[:, None]
    out = _make(out_data.reshape(B, Cout, H, W), x, w, b)
    if not out.requires_grad:
        return out

    def rule(g):
        gf = g.reshape(B, Cout, H * W)
        _acc(b, gf.sum(axis=(0, 2)))
        dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
        _acc(w, dw.reshape(Cout, Cin, kh, kh))
        if x.requires_grad:
            wt = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(Cin, Cout * kh * kh)
            gp = np.pad(g, [(0, 0), (0, 0), (p, p), (p, p)])
            gcols = _im2col(gp, kh, H, W)
            _acc(x, np.matmul(wt, gcols).reshape(B, Cin, H, W))

    return _record(out, rule)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x [B,N], w [M,N], b [M] -> [B,M]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"dense: need 2-d input and weight, got {x.data.shape} and {w.data.shape}")
    B, N = x.data.shape
    M, Nw = w.data.shape
    if Nw != N:
        raise ShapeError(f"dense: input width {N} does not match weight width {Nw}")
    if b.data.shape != (M,):
        raise ShapeError(f"dense: bias shape {b.data.shape} does not match M={M}")
    out = _make(x.data @ w.data.T + b.data, x, w, b)

    def rule(g):
        _acc(x, g @ w.data)
        _acc(w, g.T @ x.data)
        _acc(b, g.sum(axis=0))

    return _record(out, rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-d input, got shape {x.data.shape}")
    B, C, H, W = x.data.shape
    out = _make(x.data.mean(axis=(2, 3)), x)

    def rule(g):
        _acc(x, np.broadcast_to(g[:, :, None, None] / (H * W), x.data.shape))

    return _record(out, rule)
