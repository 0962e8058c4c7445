"""Memory vectors: one vector per set of descriptors.

``X`` is always ``d x n`` here, one descriptor per column.

* sum-vector:  ``m(X) = X 1``
* pinv-vector: ``m+(X) = X (X^T X)^-1 1``

The inner product of two memory vectors is the panorama similarity.  For
pinv-vectors it equals the cross-matching matrix ``X^T Y`` weighted on both
sides by inverse Gram matrices, which down-weights mutually similar
("bursty") members of a set.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_matrix, parse_ridge
from .exceptions import SingularityError, ValidationError
from .linalg import gram, solve_spd_auto


class Method(enum.Enum):
    SUM = "sum"
    PINV = "pinv"
    PRECOMPUTED = "precomputed"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown aggregation method {value!r} (choose from {choices})")


@dataclass(frozen=True, eq=False)
class MemoryVector:
    values: np.ndarray
    method: Method
    source_count: int
    ridge_used: float = 0.0
    rank_deficient: bool = field(default=False)

    def __post_init__(self):
        if self.source_count < 1:
            raise ValidationError("source_count must be >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("memory vector has non-finite values")

    @property
    def dim(self):
        return self.values.shape[0]

    def normalized(self):
        norm = np.linalg.norm(self.values)
        return self if norm == 0 else replace(self, values=self.values / norm)


def _check_group(X):
    X = check_matrix(X, "X", allow_empty=True)
    if X.shape[1] == 0 or X.shape[0] == 0:
        raise ValidationError(f"X: empty descriptor matrix with shape {X.shape}")
    return X


def sum_vector(X):
    X = _check_group(X)
    return MemoryVector(X.sum(axis=1), Method.SUM, X.shape[1])


def pinv_weights(X, ridge="auto"):
    """Return ``((X^T X + r I)^-1 1, r)`` for the ridge ``r`` actually used."""
    X = _check_group(X)
    d, n = X.shape
    return solve_spd_auto(gram(X), np.ones(n), ridge, force_ridge=n >= d)


def pinv_vector(X, ridge="auto"):
    """Pseudo-inverse memory vector ``X (X^T X + r I)^-1 1``.

    With ``ridge="auto"`` the unregularized system is tried first; groups
    with ``n >= d`` always go through the ridge and are flagged
    ``rank_deficient``.
    """
    X = _check_group(X)
    w, used = pinv_weights(X, ridge)
    return MemoryVector(X @ w, Method.PINV, X.shape[1], float(used), X.shape[1] >= X.shape[0])


def aggregate(X, method="pinv", ridge="auto"):
    method = Method.parse(method)
    if method is Method.SUM:
        return sum_vector(X)
    if method is Method.PINV:
        return pinv_vector(X, ridge)
    X = _check_group(X)
    if X.shape[1] != 1:
        raise ValidationError(
            f"precomputed aggregation expects one descriptor per location, got {X.shape[1]}"
        )
    return MemoryVector(X[:, 0].copy(), Method.PRECOMPUTED, 1)


def _check_pair(mx, my, expected=None):
    if mx.method is not my.method:
        raise ValidationError(
            f"cannot compare {mx.method.value}-vector with {my.method.value}-vector"
        )
    if expected is not None and mx.method is not expected:
        raise ValidationError(f"expected {expected.value}-vectors, got {mx.method.value}")
    if mx.dim != my.dim:
        raise ValidationError(f"dimension mismatch: {mx.dim} vs {my.dim}")


def similarity(mx, my):
    """Inner product of two memory vectors built the same way."""
    _check_pair(mx, my)
    return float(mx.values @ my.values)


def similarity_sum(mx, my):
    _check_pair(mx, my, Method.SUM)
    return float(mx.values @ my.values)


def similarity_pinv(mx, my):
    _check_pair(mx, my, Method.PINV)
    return float(mx.values @ my.values)


def cross_weight_matrix(X, Y, ridge="auto"):
    """Weighted cross-matching ``G_X^-1 X^T Y G_Y^-1`` (shape ``n x k``).

    Its grand sum is the pinv panorama similarity of ``X`` and ``Y``.
    """
    X = _check_group(X)
    Y = _check_group(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"dimension mismatch: {X.shape[0]} vs {Y.shape[0]}")
    d = X.shape[0]
    left, _ = solve_spd_auto(gram(X), X.T @ Y, ridge, force_ridge=X.shape[1] >= d)
    right, _ = solve_spd_auto(gram(Y), left.T, ridge, force_ridge=Y.shape[1] >= d)
    return right.T


class MemoryVectorEncoder(TransformerMixin, BaseEstimator):
    """Aggregate descriptor groups into memory vectors.

    ``transform`` takes a sequence of ``d x n_i`` matrices and returns an
    array of shape ``(n_groups, d)``.  Per-group metadata from the last
    call is kept in ``memory_vectors_``.

    Parameters
    ----------
    method : {"sum", "pinv", "precomputed"}
    ridge : "auto", "off" or float
    normalize : bool, default=False
        L2-normalize each memory vector (ablation; the raw vectors are
        what the similarity formulas use).
    """

    def __init__(self, method="pinv", ridge="auto", normalize=False):
        self.method = method
        self.ridge = ridge
        self.normalize = normalize

    def fit(self, groups=None, y=None):
        Method.parse(self.method)
        parse_ridge(self.ridge)
        return self

    def transform(self, groups, ids=None):
        vectors = []
        for i, X in enumerate(groups):
            try:
                mv = aggregate(X, self.method, self.ridge)
            except SingularityError as exc:
                exc.location_id = ids[i] if ids is not None else i
                raise
            vectors.append(mv.normalized() if self.normalize else mv)
        self.memory_vectors_ = vectors
        if not vectors:
            return np.empty((0, 0))
        dims = {mv.dim for mv in vectors}
        if len(dims) != 1:
            raise ValidationError(f"groups have inconsistent dimensions {sorted(dims)}")
        return np.stack([mv.values for mv in vectors])
