"""Dense float64 tensors with reverse-mode differentiation on a tape.

Every op computes its forward result eagerly with numpy and, while a Tape
is active, records a backward closure. ``backward`` replays the tape in
reverse, accumulating gradients with ``+=`` so shared inputs sum their
contributions. Tensors built outside a tape (or from ops on untracked
tensors) run inference-only and carry no gradient machinery.

Tapes are confined to one worker; parameters may be shared read-only
across workers, with updates serialized through a single owner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_EPS = 1e-12

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """Row-major float64 array of rank <= 3, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ValueError(f"tensor rank {arr.ndim} unsupported (max 3)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of ops; inputs of a node always precede it."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, backward_fn) -> None:
        out._tracked = True
        self._nodes.append((out, backward_fn))


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._tracked


def _finish(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(_needs_grad(t) for t in inputs):
        tape.record(out, backward_fn)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if _needs_grad(t):
        t.accumulate_grad(g)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep seeding d(loss)/d(loss) = 1. Single use per tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, backward_fn in reversed(tape._nodes):
        if out.grad is None:
            continue
        backward_fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise helpers


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    # piecewise form never exponentiates a positive argument, so no overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor, *, ta: bool = False, tb: bool = False) -> Tensor:
    """2-D matrix product, with optional transposes applied to the operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    av = a.data.T if ta else a.data
    bv = b.data.T if tb else b.data
    if av.shape[1] != bv.shape[0]:
        raise ValueError(
            f"matmul inner dimensions differ: {av.shape} x {bv.shape}"
            f" (ta={ta}, tb={tb}, raw {a.data.shape} x {b.data.shape})"
        )
    out = Tensor(av @ bv)

    def bw(g: np.ndarray) -> None:
        if _needs_grad(a):
            da = g @ bv.T
            _accum(a, da.T if ta else da)
        if _needs_grad(b):
            db = av.T @ g
            _accum(b, db.T if tb else db)

    return _finish(out, (a, b), bw)


def matmul_consistent(a: Tensor, b: Tensor) -> Tensor:
    """2-D product whose output columns are bitwise functions of the matching
    input columns.

    The BLAS kernel behind ``matmul`` may round duplicate columns differently
    depending on their position in the matrix; the einsum path accumulates
    every output element in the same order, so duplicated columns of ``b``
    yield bitwise-identical output columns. Used where exact cross-mode
    comparisons depend on that property.
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul_consistent needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul_consistent inner dimensions differ: {a.data.shape} x {b.data.shape}")
    out = Tensor(np.einsum("ik,kt->it", a.data, b.data, optimize=False))

    def bw(g: np.ndarray) -> None:
        if _needs_grad(a):
            _accum(a, g @ b.data.T)
        if _needs_grad(b):
            _accum(b, a.data.T @ g)

    return _finish(out, (a, b), bw)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose2d needs a matrix, got shape {x.data.shape}")
    out = Tensor(x.data.T.copy())

    def bw(g: np.ndarray) -> None:
        _accum(x, g.T)

    return _finish(out, (x,), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def bw(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)

    return _finish(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def bw(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _finish(out, (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_arr(x.data)
    out = Tensor(y)

    def bw(g: np.ndarray) -> None:
        _accum(x, g * y * (1.0 - y))

    return _finish(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def bw(g: np.ndarray) -> None:
        _accum(x, g * (1.0 - y * y))

    return _finish(out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows of equal scores map to an
    exactly uniform distribution."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def bw(g: np.ndarray) -> None:
        inner = np.sum(g * y, axis=axis, keepdims=True)
        _accum(x, y * (g - inner))

    return _finish(out, (x,), bw)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat of zero tensors")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _finish(out, tuple(parts), bw)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = x.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice [{start}:{stop}] out of bounds for axis {axis} of size {n}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    out = Tensor(x.data[tuple(idx)].copy())

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[tuple(idx)] = g
        _accum(x, full)

    return _finish(out, (x,), bw)


def gather(table: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ValueError(f"gather table must be 2-D, got shape {table.data.shape}")
    ids = np.asarray(indices, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"gather indices must be 1-D, got shape {ids.shape}")
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"gather index out of range [0, {n}): {ids}")
    out = Tensor(table.data[ids])

    def bw(g: np.ndarray) -> None:
        if _needs_grad(table):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table.accumulate_grad(gt)

    return _finish(out, (table,), bw)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(np.sum(x.data, axis=axis))

    def bw(g: np.ndarray) -> None:
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _finish(out, (x,), bw)


def mean_cols(x: Tensor) -> Tensor:
    """Mean over the column axis of a matrix, one value per row."""
    if x.data.ndim != 2:
        raise ValueError(f"mean_cols needs a matrix, got shape {x.data.shape}")
    n = x.data.shape[1]
    out = Tensor(np.mean(x.data, axis=1))

    def bw(g: np.ndarray) -> None:
        _accum(x, np.repeat(g[:, None] / n, n, axis=1))

    return _finish(out, (x,), bw)


def maxpool_cols(x: Tensor) -> Tensor:
    """Max over the column axis; backward routes to the argmax column
    (first column on ties)."""
    if x.data.ndim != 2:
        raise ValueError(f"maxpool_cols needs a matrix, got shape {x.data.shape}")
    amax = np.argmax(x.data, axis=1)
    rows = np.arange(x.data.shape[0])
    out = Tensor(x.data[rows, amax])

    def bw(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[rows, amax] = g
        _accum(x, gx)

    return _finish(out, (x,), bw)


def repeat_rows(v: Tensor, n: int) -> Tensor:
    """Stack a vector into n identical rows; backward sums over rows."""
    if v.data.ndim != 1:
        raise ValueError(f"repeat_rows needs a vector, got shape {v.data.shape}")
    out = Tensor(np.tile(v.data, (n, 1)))

    def bw(g: np.ndarray) -> None:
        _accum(v, g.sum(axis=0))

    return _finish(out, (v,), bw)


def binary_cross_entropy(yhat: Tensor, target) -> Tensor:
    """Summed binary cross-entropy over all labels (no mean reduction).

    Predictions are clamped into [PROB_EPS, 1 - PROB_EPS]; the clamp has zero
    derivative outside that band.
    """
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if yhat.data.shape != y.shape:
        raise ValueError(f"bce shape mismatch: {yhat.data.shape} vs {y.shape}")
    yc = np.clip(yhat.data, PROB_EPS, 1.0 - PROB_EPS)
    loss = np.sum(-y * np.log(yc) - (1.0 - y) * np.log(1.0 - yc))
    out = Tensor(loss)

    def bw(g: np.ndarray) -> None:
        inside = (yhat.data >= PROB_EPS) & (yhat.data <= 1.0 - PROB_EPS)
        d = np.where(inside, (yc - y) / (yc * (1.0 - yc)), 0.0)
        _accum(yhat, g * d)

    return _finish(out, (yhat,), bw)


def lstm_sequence(
    emb: Tensor,
    w_input: Tensor,
    w_hidden: Tensor,
    bias: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Run a single LSTM direction over a token-major embedding matrix.

    ``emb`` is N x d_e; gate weights are packed [input, forget, cell, output]
    along the first axis: ``w_input`` 4d x d_e, ``w_hidden`` 4d x d, ``bias``
     4d. Initial hidden and cell states are zero. Output row i is the hidden
    state at token i (for ``reverse`` the recurrence runs from the last token,
    rows stay aligned with the input). Backward is truncated nowhere: full
    backpropagation through time, recorded as one tape node.
    """
    E = emb.data
    if E.ndim != 2:
        raise ValueError(f"lstm_sequence needs a 2-D embedding matrix, got {E.shape}")
    wx, wh, b = w_input.data, w_hidden.data, bias.data
    d = wh.shape[1]
    if wx.shape[0] != 4 * d or wh.shape[0] != 4 * d or b.shape != (4 * d,):
        raise ValueError(
            f"lstm weight shapes inconsistent: w_input {wx.shape}, w_hidden {wh.shape}, bias {b.shape}"
        )
    if wx.shape[1] != E.shape[1]:
        raise ValueError(f"lstm input width {wx.shape[1]} != embedding width {E.shape[1]}")

    n = E.shape[0]
    order = range(n - 1, -1, -1) if reverse else range(n)
    pre = E @ wx.T + b

    H = np.empty((n, d))
    gi = np.empty((n, d))
    gf = np.empty((n, d))
    gc = np.empty((n, d))
    go = np.empty((n, d))
    cells = np.empty((n, d))
    tanh_cells = np.empty((n, d))
    h_prev = np.empty((n, d))
    c_prev = np.empty((n, d))

    h = np.zeros(d)
    c = np.zeros(d)
    for t in order:
        z = pre[t] + wh @ h
        i_t = _sigmoid_arr(z[:d])
        f_t = _sigmoid_arr(z[d : 2 * d])
        g_t = np.tanh(z[2 * d : 3 * d])
        o_t = _sigmoid_arr(z[3 * d :])
        h_prev[t] = h
        c_prev[t] = c
        c = f_t * c + i_t * g_t
        h = o_t * np.tanh(c)
        gi[t], gf[t], gc[t], go[t] = i_t, f_t, g_t, o_t
        cells[t] = c
        tanh_cells[t] = np.tanh(c)
        H[t] = h

    out = Tensor(H)

    def bw(G: np.ndarray) -> None:
        dpre = np.empty((n, 4 * d))
        dwh = np.zeros_like(wh)
        db = np.zeros_like(b)
        dh_next = np.zeros(d)
        dc_next = np.zeros(d)
        for t in reversed(order):
            dh = G[t] + dh_next
            do = dh * tanh_cells[t]
            dct = dh * go[t] * (1.0 - tanh_cells[t] ** 2) + dc_next
            di = dct * gc[t]
            dg = dct * gi[t]
            df = dct * c_prev[t]
            dc_next = dct * gf[t]
            dz = np.concatenate(
                [
                    di * gi[t] * (1.0 - gi[t]),
                    df * gf[t] * (1.0 - gf[t]),
                    dg * (1.0 - gc[t] ** 2),
                    do * go[t] * (1.0 - go[t]),
                ]
            )
            dpre[t] = dz
            dwh += np.outer(dz, h_prev[t])
            db += dz
            dh_next = wh.T @ dz
        _accum(w_input, dpre.T @ E)
        _accum(w_hidden, dwh)
        _accum(bias, db)
        _accum(emb, dpre @ wx)

    return _finish(out, (emb, w_input, w_hidden, bias), bw)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state, one slot per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One update over all parameters; a missing gradient counts as zero."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for idx, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if idx not in state.m:
            state.m[idx] = np.zeros_like(p.data)
            state.v[idx] = np.zeros_like(p.data)
        m = state.m[idx]
        v = state.v[idx]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params: list[Tensor], lr: float) -> None:
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.zero_grad()
