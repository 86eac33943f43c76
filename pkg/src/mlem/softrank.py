"""Exact Spearman correlation and its differentiable relaxation.

The relaxation replaces the hard rank vector with the Euclidean
projection of ``x / eps`` onto the permutahedron of (1, ..., n), computed
with a single isotonic-regression solve.  As ``eps`` shrinks, the soft
ranks converge to the hard ranks; as it grows, all entries collapse to
the permutahedron center (n + 1) / 2.  The projection is piecewise
linear, and its Jacobian is block structured over the pooled blocks of
the isotonic solution, which gives a cheap exact vector-Jacobian
product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError


@dataclass(frozen=True)
class SoftRankConfig:
    """Relaxation strength for the soft rank operator (smaller = harder)."""

    regularization: float = 1.0

    def __post_init__(self):
        if not self.regularization > 0:
            raise ValueError("regularization must be positive")


def isotonic_regression(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``y`` onto the nondecreasing cone.

    Pool-adjacent-violators: scan left to right, merging each new point
    into the previous block while the previous block mean exceeds the
    running mean.  Output is nondecreasing and preserves block means.
    """
    fitted, _ = _pav_blocks(np.asarray(y, dtype=np.float64))
    return fitted


def _pav_blocks(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """PAV fit plus the block sizes of the pooled solution."""
    n = y.shape[0]
    means = np.empty(n, dtype=np.float64)
    sizes = np.empty(n, dtype=np.int64)
    top = 0
    for value in y:
        cur_mean = value
        cur_size = 1
        while top > 0 and means[top - 1] > cur_mean:
            top -= 1
            total = means[top] * sizes[top] + cur_mean * cur_size
            cur_size += sizes[top]
            cur_mean = total / cur_size
        means[top] = cur_mean
        sizes[top] = cur_size
        top += 1
    return np.repeat(means[:top], sizes[:top]), sizes[:top].copy()


@dataclass(frozen=True)
class _SoftRankState:
    """Forward result plus what the pullback needs (sort order and blocks)."""

    ranks: np.ndarray
    order: np.ndarray
    block_sizes: np.ndarray
    regularization: float


def _soft_rank_state(x: np.ndarray, cfg: SoftRankConfig) -> _SoftRankState:
    z = np.asarray(x, dtype=np.float64) / cfg.regularization
    n = z.shape[0]
    order = np.argsort(z, kind="stable")
    a = z[order]
    # Projection onto the permutahedron of (1..n): in sorted coordinates
    # it equals a - PAV(a - (1..n)).  Subtracting the PAV fit keeps the
    # coordinate sum at n(n+1)/2 exactly because PAV preserves totals.
    fitted, sizes = _pav_blocks(a - np.arange(1.0, n + 1.0))
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = a - fitted
    return _SoftRankState(ranks=ranks, order=order, block_sizes=sizes, regularization=cfg.regularization)


def soft_rank(x: np.ndarray, cfg: SoftRankConfig | None = None) -> np.ndarray:
    """Differentiable surrogate ranks in [1, n]; larger value, larger rank."""
    return _soft_rank_state(x, cfg or SoftRankConfig()).ranks


def _state_vjp(state: _SoftRankState, upstream: np.ndarray) -> np.ndarray:
    # Jacobian in sorted coordinates is (I - blockwise averaging) / eps,
    # which is symmetric, so the VJP subtracts per-block means.
    u = np.asarray(upstream, dtype=np.float64)[state.order]
    out = u.copy()
    start = 0
    for size in state.block_sizes:
        stop = start + size
        out[start:stop] -= u[start:stop].mean()
        start = stop
    result = np.empty_like(out)
    result[state.order] = out
    return result / state.regularization


def soft_rank_pullback(
    x: np.ndarray, cfg: SoftRankConfig, upstream: np.ndarray
) -> np.ndarray:
    """Vector-Jacobian product of :func:`soft_rank` at ``x``."""
    return _state_vjp(_soft_rank_state(x, cfg), upstream)


def midranks(values: np.ndarray) -> np.ndarray:
    """Tie-averaged ranks 1..n (ties share the mean of their positions)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson_with_grad(r: np.ndarray, g: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """Pearson correlation of (r, g) and its gradient in r.

    Returns (value, gradient, degenerate); degenerate means either
    vector is constant, in which case value and gradient are zero.
    """
    u = r - r.mean()
    v = g - g.mean()
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= 0.0 or nv <= 0.0:
        return 0.0, np.zeros_like(r), True
    rho = float(u @ v) / (nu * nv)
    grad = (v / nv - rho * u / nu) / nu
    return rho, grad, False


def spearman_exact(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman correlation: Pearson on tie-averaged ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("inputs must be equal-length vectors with n >= 2")
    value, _, degenerate = _pearson_with_grad(midranks(a), midranks(b))
    if degenerate:
        raise DegenerateDataError("spearman undefined for a constant vector")
    return value


def spearman_soft(
    pred: np.ndarray, target: np.ndarray, cfg: SoftRankConfig | None = None
) -> tuple[float, np.ndarray, bool]:
    """Differentiable Spearman objective and its gradient in ``pred``.

    The value is the Pearson correlation between the soft ranks of
    ``pred`` and the hard tie-averaged ranks of ``target`` (targets are
    constants of the optimization, so only predictions are relaxed).
    Returns (value, grad, degenerate); a constant-rank degenerate case
    yields value 0 with a zero gradient.
    """
    cfg = cfg or SoftRankConfig()
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1 or pred.shape[0] < 2:
        raise ValueError("inputs must be equal-length vectors with n >= 2")
    state = _soft_rank_state(pred, cfg)
    value, grad_ranks, degenerate = _pearson_with_grad(state.ranks, midranks(target))
    if degenerate:
        return 0.0, np.zeros_like(pred), True
    return value, _state_vjp(state, grad_ranks), False
