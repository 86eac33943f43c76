"""The learned weight matrix and its gradient machinery.

Two variants share one unconstrained parameter matrix A:

* ``mlem``: A maps to a Cholesky factor (strictly lower triangle taken
  as is, diagonal through softplus), so W = L L^T is symmetric positive
  definite by construction and the predicted distance is the weighted
  norm sqrt(p^T W p).
* ``frrsai``: W is the plain symmetrization (A + A^T) / 2 with no
  definiteness constraint.  The forward pass returns the raw quadratic
  form p^T W p without the square root, which would be undefined for
  indefinite W; rank-based objectives are unaffected because the square
  root is monotone on the nonnegative reals.

W is rescaled to unit Frobenius norm inside the forward pass and the
rescaling is differentiated through, so the optimization problem itself
is unchanged (the objective is scale invariant) while the parameters
stay well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDataError, InvalidInputError
from .pairs import PairBatch
from .softrank import SoftRankConfig, spearman_soft

MLEM = "mlem"
FRRSAI = "frrsai"
VARIANTS = (MLEM, FRRSAI)


def _check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise InvalidInputError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return variant


@dataclass(frozen=True)
class MetricParams:
    """Unconstrained m x m parameter matrix plus the variant tag."""

    A: np.ndarray
    variant: str

    def __post_init__(self):
        _check_variant(self.variant)
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidInputError("parameter matrix must be square")
        if not np.isfinite(A).all():
            raise InvalidInputError("parameter matrix has non-finite entries")
        object.__setattr__(self, "A", A)

    @property
    def m(self) -> int:
        return self.A.shape[0]


def init_params(m: int, variant: str, rng: np.random.Generator) -> MetricParams:
    """Fresh parameters drawn from the standard linear-layer law U(-1/sqrt(m), 1/sqrt(m))."""
    bound = 1.0 / np.sqrt(m)
    return MetricParams(A=rng.uniform(-bound, bound, size=(m, m)), variant=variant)


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow on either tail
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _cholesky_factor(A: np.ndarray) -> np.ndarray:
    L = np.tril(A, k=-1)
    np.fill_diagonal(L, _softplus(np.diag(A)))
    return L


def build_weights(params: MetricParams) -> np.ndarray:
    """Weight matrix W from the unconstrained parameters (not normalized)."""
    if params.variant == MLEM:
        L = _cholesky_factor(params.A)
        return L @ L.T
    return 0.5 * (params.A + params.A.T)


def normalize_frobenius(W: np.ndarray) -> np.ndarray:
    """W divided by its Frobenius norm."""
    norm = float(np.linalg.norm(W))
    if norm <= 0.0:
        raise DegenerateDataError("weight matrix is zero, cannot normalize")
    return W / norm


def predict_from_rows(W: np.ndarray, rows: np.ndarray, variant: str) -> np.ndarray:
    """Predicted distances for raw feature-distance rows (b, m)."""
    _check_variant(variant)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != W.shape[0]:
        raise InvalidInputError(
            f"feature rows have width {rows.shape[-1]}, weights are {W.shape[0]} x {W.shape[0]}"
        )
    q = np.einsum("bi,ij,bj->b", rows, W, rows)
    if variant == MLEM:
        return np.sqrt(np.maximum(q, 0.0))
    return q


def predict_distances(W: np.ndarray, batch: PairBatch, variant: str) -> np.ndarray:
    """Predicted distances for every pair in the batch."""
    return predict_from_rows(W, batch.feature_distances, variant)


@dataclass(frozen=True)
class MinMaxState:
    """Running extremes for online min-max scaling of neural distances."""

    lo: float = np.inf
    hi: float = -np.inf


def minmax_scale(
    values: np.ndarray, state: MinMaxState
) -> tuple[np.ndarray, MinMaxState, bool]:
    """Scale to [0, 1] against running extremes updated with this batch.

    Returns (scaled, new_state, degenerate); degenerate is set when the
    running range is still empty (max == min), in which case all scaled
    values are 0.
    """
    values = np.asarray(values, dtype=np.float64)
    state = replace(
        state,
        lo=min(state.lo, float(values.min())),
        hi=max(state.hi, float(values.max())),
    )
    span = state.hi - state.lo
    if span <= 0.0:
        return np.zeros_like(values), state, True
    return np.clip((values - state.lo) / span, 0.0, 1.0), state, False


@dataclass(frozen=True)
class ObjectiveResult:
    value: float
    grad: np.ndarray
    scaler: MinMaxState
    degenerate: bool


def objective_and_gradient(
    params: MetricParams,
    batch: PairBatch,
    cfg: SoftRankConfig | None = None,
    scaler: MinMaxState | None = None,
) -> ObjectiveResult:
    """Soft Spearman objective on a batch and its gradient in A.

    The chain runs soft rank -> Pearson -> square root (mlem only) ->
    quadratic form -> Frobenius normalization -> Cholesky product ->
    softplus.  A batch with constant targets (or constant soft ranks)
    is degenerate: value 0, zero gradient, flag set, no error.
    """
    cfg = cfg or SoftRankConfig()
    scaler = scaler or MinMaxState()
    P = batch.feature_distances
    if batch.size < 2:
        raise InvalidInputError("need at least 2 pairs to correlate")
    if P.shape[1] != params.m:
        raise InvalidInputError(
            f"batch has {P.shape[1]} features, parameters have {params.m}"
        )

    if params.variant == MLEM:
        L = _cholesky_factor(params.A)
        W = L @ L.T
    else:
        L = None
        W = 0.5 * (params.A + params.A.T)
    norm = float(np.linalg.norm(W))
    if norm <= 0.0:
        raise DegenerateDataError("weight matrix is zero, cannot normalize")
    Wn = W / norm

    q = np.einsum("bi,ij,bj->b", P, Wn, P)
    if params.variant == MLEM:
        pred = np.sqrt(np.maximum(q, 0.0))
    else:
        pred = q

    target, scaler, _ = minmax_scale(batch.neural_distances, scaler)
    value, dpred, degenerate = spearman_soft(pred, target, cfg)
    if degenerate:
        return ObjectiveResult(0.0, np.zeros_like(params.A), scaler, True)

    if params.variant == MLEM:
        # d sqrt(q)/dq = 1/(2 sqrt(q)); a pair with q = 0 has p = 0, so the
        # true derivative through it is 0 for every W.
        safe_q = np.where(q > 0.0, q, 1.0)
        dq = np.where(q > 0.0, dpred / (2.0 * np.sqrt(safe_q)), 0.0)
    else:
        dq = dpred
    G = (P * dq[:, None]).T @ P
    G = 0.5 * (G + G.T)
    # through W / ||W||_F
    S = (G - float(np.sum(G * Wn)) * Wn) / norm
    if params.variant == MLEM:
        dL = 2.0 * (S @ L)
        grad = np.tril(dL, k=-1)
        np.fill_diagonal(grad, np.diag(dL) * _sigmoid(np.diag(params.A)))
    else:
        grad = S.copy()
    return ObjectiveResult(float(value), grad, scaler, False)


def weights_payload(variant: str, feature_names: list[str], W: np.ndarray) -> dict:
    """JSON payload for a weight matrix in the documented schema."""
    m = W.shape[0]
    return {
        "variant": variant,
        "m": m,
        "feature_names": list(feature_names),
        "W": [float(x) for x in np.asarray(W, dtype=np.float64).reshape(-1)],
    }


def weights_from_payload(payload: dict) -> tuple[str, list[str], np.ndarray]:
    try:
        variant = _check_variant(payload["variant"])
        m = int(payload["m"])
        names = [str(x) for x in payload["feature_names"]]
        W = np.asarray(payload["W"], dtype=np.float64).reshape(m, m)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad weight payload: {exc}") from None
    if len(names) != m:
        raise InvalidInputError("feature_names length does not match m")
    return variant, names, W
