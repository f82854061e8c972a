"""Independent reference computations used to check the real implementations.

Everything in here is deliberately naive: literal enumeration, central
finite differences, scalar recurrences. None of it shares code with the
package under test.
"""

from __future__ import annotations

import math

import numpy as np

FD_STEP = 1e-5


def finite_difference_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar-valued f with respect to x.

    f must recompute from the current contents of x; x is perturbed in place
    and restored.
    """
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(num / den)) if num.size else 0.0


def pairwise_auc(scores, labels) -> float | None:
    """O(n^2) pair enumeration: concordant pairs plus half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def scalar_lstm_states(tokens, wx, wh, b):
    """Single-unit LSTM recurrence on scalar inputs.

    wx, wh: 4-vectors of input/recurrent weights, b: 4-vector of biases,
    gate order (input, forget, cell, output). Returns the hidden state at
    each step.
    """

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h, c = 0.0, 0.0
    states = []
    for x in tokens:
        zi = wx[0] * x + wh[0] * h + b[0]
        zf = wx[1] * x + wh[1] * h + b[1]
        zg = wx[2] * x + wh[2] * h + b[2]
        zo = wx[3] * x + wh[3] * h + b[3]
        i, f, g, o = sig(zi), sig(zf), math.tanh(zg), sig(zo)
        c = f * c + i * g
        h = o * math.tanh(c)
        states.append(h)
    return states


def enumerate_best_split(
    x: np.ndarray,
    targets: np.ndarray,
    lam: float,
    min_child_rows: int,
):
    """Literal enumeration of every (column, threshold, default side) split.

    x: rows by columns feature matrix with NaN for missing cells; targets in
    {0, 1}. Gradients and hessians follow a half-probability starting point.
    Returns (gain, column, threshold, default_left) of the best candidate
    with positive gain under the tie rule (lowest column, then smallest
    threshold, then default left), or None when no candidate has gain > 0.
    """
    g = 0.5 - targets.astype(np.float64)
    h = np.full(len(targets), 0.25)
    g_total = g.sum()
    h_total = h.sum()
    parent = g_total**2 / (h_total + lam)
    best = None
    for col in range(x.shape[1]):
        vals = x[:, col]
        present = ~np.isnan(vals)
        distinct = np.unique(vals[present])
        if len(distinct) < 2:
            continue
        thresholds = (distinct[:-1] + distinct[1:]) / 2.0
        for thr in thresholds:
            for default_left in (True, False):
                go_left = np.where(present, vals < thr, default_left)
                n_left = int(go_left.sum())
                n_right = len(targets) - n_left
                if n_left < min_child_rows or n_right < min_child_rows:
                    continue
                gl = g[go_left].sum()
                hl = h[go_left].sum()
                gr = g_total - gl
                hr = h_total - hl
                gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - parent)
                if gain <= 0.0:
                    continue
                key = (-gain, col, thr, not default_left)
                if best is None or key < best[0]:
                    best = (key, gain, col, thr, default_left)
    if best is None:
        return None
    _, gain, col, thr, default_left = best
    return gain, col, thr, default_left
