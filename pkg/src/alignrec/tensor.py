"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every value in the forward/backward computation is a `Tensor` wrapping a
row-major numpy float64 array. Operations are plain functions; when a `Tape`
is active and an input requires a gradient, the op appends a backward closure
to the tape. `backward(loss, tape)` replays the tape in exact reverse
execution order and accumulates gradients into the `.grad` buffers of every
reachable tensor that requires one.

Conventions:
  - Feature maps are (channels, length); a leading batch axis is accepted by
    the conv/pool ops and treated as independent rows.
  - Elementwise binary ops allow the second operand to broadcast over a
    single axis, e.g. (C, 1) against (C, L) or (1, L) against (C, L).
  - Tapes are eager, single-use and thread-confined. Tensors themselves are
    value-semantic and safe to share once no tape references them.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ParameterError(ValueError):
    """A scalar argument (dilation, bandwidth, temperature, ...) is invalid."""


class UsageError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


def _as_f64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """Shape-checked float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_f64(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed primitives, replayed backward once."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _pop_tape(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._nodes.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._nodes)


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape) -> None:
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape) -> None:
    popped = _TAPE_STACK.pop()
    if popped is not tape:
        raise UsageError("tape exited out of order")


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_out(values, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap a forward result, recording the node if grads are needed."""
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=requires)
    tape = active_tape()
    if tape is not None and requires:
        tape.record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate `.grad` on every requires_grad ancestor of a scalar loss.

    Repeated calls without clearing gradients accumulate, matching the
    additive semantics of `Tensor.accumulate_grad`.
    """
    if loss.data.ndim != 0:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    loss.accumulate_grad(np.ones((), dtype=np.float64))
    for out, inputs, backward_fn in reversed(tape._nodes):
        if out.grad is None:
            continue  # node not on the path from the loss
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            t.accumulate_grad(g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcastable(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _flat_batch(a: np.ndarray, core_ndim: int) -> np.ndarray:
    """Collapse any leading batch axes so einsum can sum over them."""
    return a.reshape(-1, *a.shape[a.ndim - core_ndim:])


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.data, b.data, "add")

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make_out(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.data, b.data, "sub")

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make_out(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; `b` may broadcast over one axis, e.g. (C,1) or (1,L)."""
    _check_broadcastable(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make_out(ad * bd, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make_out(a.data * c, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make_out(np.where(mask, a.data, 0.0), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # branch on sign to avoid overflow in exp
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make_out(out, (a,), bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at exact ties the gradient routes to `a` only."""
    _check_broadcastable(a.data, b.data, "maximum")
    take_a = a.data >= b.data

    def bw(g):
        return (_unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
                _unbroadcast(np.where(take_a, 0.0, g), b.data.shape))

    return _make_out(np.where(take_a, a.data, b.data), (a, b), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make_out(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def bw(g):
        return (g / ad,)

    return _make_out(np.log(ad), (a,), bw)


def square(a: Tensor) -> Tensor:
    ad = a.data

    def bw(g):
        return (g * 2.0 * ad,)

    return _make_out(ad * ad, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), the numerically stable form of -log(sigmoid(-x))."""
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        return (g * sig,)

    return _make_out(out, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def bw(g):
        return (np.full(shape, g, dtype=np.float64),)

    return _make_out(a.data.sum(), (a,), bw)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make_out(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _make_out(a.data.reshape(shape), (a,), bw)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose2d expects a matrix, got shape {a.data.shape}")

    def bw(g):
        return (g.T.copy(),)

    return _make_out(a.data.T.copy(), (a,), bw)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise DimensionError(
            f"concat_rows: shapes {a.data.shape} and {b.data.shape} do not stack")
    na = a.data.shape[0]

    def bw(g):
        return g[:na], g[na:]

    return _make_out(np.concatenate([a.data, b.data], axis=0), (a, b), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        full[start:stop] = g
        return (full,)

    return _make_out(a.data[start:stop].copy(), (a,), bw)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows expects a 1-d index, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(
            f"gather_rows: index out of range for {a.data.shape[0]} rows")
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return _make_out(a.data[idx], (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias) over the trailing axis of x."""
    xd, wd = x.data, weight.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise DimensionError(
            f"linear: input shape {xd.shape} does not match weight shape {wd.shape}")
    out = xd @ wd
    if bias is not None:
        if bias.data.shape != (wd.shape[1],):
            raise DimensionError(
                f"linear: bias shape {bias.data.shape} does not match output dim {wd.shape[1]}")
        out = out + bias.data

    if bias is None:
        def bw(g):
            gw = _flat_batch(xd, 1).T @ _flat_batch(g, 1)
            return g @ wd.T, gw
        return _make_out(out, (x, weight), bw)

    def bw_b(g):
        gf = _flat_batch(g, 1)
        gw = _flat_batch(xd, 1).T @ gf
        gb = gf.sum(axis=0)
        return g @ wd.T, gw, gb

    return _make_out(out, (x, weight, bias), bw_b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul: shapes {ad.shape} and {bd.shape} do not agree")

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _make_out(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# convolutions and pooling on (…, C, L) maps
# ---------------------------------------------------------------------------

def conv1x1(x: Tensor, kernel: Tensor) -> Tensor:
    """Pointwise channel mixing: out[..., o, l] = sum_c kernel[o, c] * x[..., c, l]."""
    xd, kd = x.data, kernel.data
    if kd.ndim != 2 or xd.ndim < 2 or xd.shape[-2] != kd.shape[1]:
        raise DimensionError(
            f"conv1x1: input shape {xd.shape} does not match kernel shape {kd.shape}")

    def bw(g):
        gx = np.einsum("oc,...ol->...cl", kd, g)
        gk = np.einsum("nol,ncl->oc", _flat_batch(g, 2), _flat_batch(xd, 2))
        return gx, gk

    return _make_out(np.einsum("oc,...cl->...ol", kd, xd), (x, kernel), bw)


def conv1d_dilated(x: Tensor, kernel: Tensor, dilation: int) -> Tensor:
    """Length-3 dilated convolution with symmetric zero padding of `dilation`.

    Output length equals input length: out[..., o, l] =
    sum_{c,k in 0..2} kernel[o, c, k] * xpad[..., c, l + k*dilation].
    """
    if dilation < 1:
        raise ParameterError(f"dilation must be >= 1, got {dilation}")
    xd, kd = x.data, kernel.data
    if kd.ndim != 3 or kd.shape[2] != 3 or xd.ndim < 2 or xd.shape[-2] != kd.shape[1]:
        raise DimensionError(
            f"conv1d_dilated: input shape {xd.shape} does not match kernel shape {kd.shape}")
    length = xd.shape[-1]
    if length < 1:
        raise DimensionError("conv1d_dilated: empty spatial extent")

    pad = [(0, 0)] * (xd.ndim - 1) + [(dilation, dilation)]
    xp = np.pad(xd, pad)
    # taps[..., c, k, l] = xpad[..., c, l + k*dilation]
    taps = np.stack([xp[..., k * dilation:k * dilation + length] for k in range(3)],
                    axis=-2)

    def bw(g):
        gk = np.einsum("nol,nckl->ock", _flat_batch(g, 2), _flat_batch(taps, 3))
        gxp = np.zeros_like(xp)
        spread = np.einsum("ock,...ol->...ckl", kd, g)
        for k in range(3):
            gxp[..., k * dilation:k * dilation + length] += spread[..., k, :]
        return gxp[..., dilation:dilation + length], gk

    return _make_out(np.einsum("ock,...ckl->...ol", kd, taps), (x, kernel), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the length axis: (…, C, L) -> (…, C, 1)."""
    xd = x.data
    if xd.ndim < 2 or xd.shape[-1] < 1:
        raise DimensionError(f"global_avg_pool: bad input shape {xd.shape}")
    length = xd.shape[-1]

    def bw(g):
        return (np.broadcast_to(g / length, xd.shape).copy(),)

    return _make_out(xd.mean(axis=-1, keepdims=True), (x,), bw)


def channel_mean(x: Tensor) -> Tensor:
    """Mean over the channel axis: (…, C, L) -> (…, 1, L)."""
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError(f"channel_mean: bad input shape {xd.shape}")
    channels = xd.shape[-2]

    def bw(g):
        return (np.broadcast_to(g / channels, xd.shape).copy(),)

    return _make_out(xd.mean(axis=-2, keepdims=True), (x,), bw)


def broadcast_len(x: Tensor, length: int) -> Tensor:
    """Repeat a single-position map to `length` positions; backward sums back."""
    if length < 1:
        raise ParameterError(f"broadcast_len: length must be >= 1, got {length}")
    xd = x.data
    if xd.ndim < 2 or xd.shape[-1] != 1:
        raise DimensionError(f"broadcast_len: source spatial extent must be 1, got {xd.shape}")

    def bw(g):
        return (g.sum(axis=-1, keepdims=True),)

    return _make_out(np.repeat(xd, length, axis=-1), (x,), bw)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Stack maps along the channel axis in argument order."""
    if not parts:
        raise DimensionError("concat_channels: empty part list")
    lengths = {p.data.shape[-1] for p in parts}
    leading = {p.data.shape[:-2] for p in parts}
    if len(lengths) != 1 or len(leading) != 1:
        raise DimensionError(
            f"concat_channels: mismatched shapes {[p.data.shape for p in parts]}")
    sizes = [p.data.shape[-2] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[..., offsets[i]:offsets[i + 1], :] for i in range(len(parts)))

    return _make_out(np.concatenate([p.data for p in parts], axis=-2),
                     tuple(parts), bw)


# ---------------------------------------------------------------------------
# normalization and similarity kernels
# ---------------------------------------------------------------------------

_NORM_EPS = 1e-12


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Divide each row by max(|row|, 1e-12); near-zero rows pass through scaled."""
    xd = x.data
    norms = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, _NORM_EPS)
    out = xd / denom

    def bw(g):
        # rows above the guard: (g - y * <y, g>) / |x|; guarded rows: g / eps
        dot = (out * g).sum(axis=-1, keepdims=True)
        gx = np.where(norms > _NORM_EPS, (g - out * dot) / denom, g / denom)
        return (gx,)

    return _make_out(out, (x,), bw)


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs squared Euclidean distances: out[i, j] = |a_i - b_j|^2."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[1]:
        raise DimensionError(
            f"pairwise_sqdist: shapes {ad.shape} and {bd.shape} do not agree")
    sq_a = (ad * ad).sum(axis=1)[:, None]
    sq_b = (bd * bd).sum(axis=1)[None, :]
    out = np.maximum(sq_a + sq_b - 2.0 * (ad @ bd.T), 0.0)

    def bw(g):
        ga = 2.0 * (g.sum(axis=1, keepdims=True) * ad - g @ bd)
        gb = 2.0 * (g.sum(axis=0)[:, None] * bd - g.T @ ad)
        return ga, gb

    return _make_out(out, (a, b), bw)


def gaussian_from_sqdist(d: Tensor, sigma: float) -> Tensor:
    """exp(-d / (2 sigma^2)) applied elementwise to squared distances."""
    if sigma <= 0:
        raise ParameterError(f"kernel bandwidth must be positive, got {sigma}")
    coef = -1.0 / (2.0 * sigma * sigma)
    out = np.exp(coef * d.data)

    def bw(g):
        return (g * out * coef,)

    return _make_out(out, (d,), bw)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))) with max-shift stabilization; (N, D) -> (N,)."""
    xd = x.data
    if xd.ndim != 2:
        raise DimensionError(f"logsumexp_rows expects a matrix, got shape {xd.shape}")
    m = xd.max(axis=1, keepdims=True)
    shifted = np.exp(xd - m)
    total = shifted.sum(axis=1, keepdims=True)
    out = (np.log(total) + m).reshape(-1)
    softmax = shifted / total

    def bw(g):
        return (softmax * g[:, None],)

    return _make_out(out, (x,), bw)


def spmm_const(adjacency, x: Tensor) -> Tensor:
    """Multiply by a constant sparse operator; backward applies its transpose."""
    if adjacency.shape[1] != x.data.shape[0]:
        raise DimensionError(
            f"spmm_const: operator shape {adjacency.shape} does not match rows {x.data.shape}")
    adj_t = adjacency.T.tocsr()

    def bw(g):
        return (adj_t @ g,)

    return _make_out(adjacency @ x.data, (x,), bw)
