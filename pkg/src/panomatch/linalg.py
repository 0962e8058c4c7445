"""Small dense linear algebra: Gram matrices, SPD solves and PCA.

Descriptor matrices follow the column convention used by the aggregation
code: a ``d x n`` array holds ``n`` descriptors of dimension ``d``.  The
PCA estimator follows the scikit-learn convention instead (rows are
samples) so it can sit inside a ``Pipeline``.
"""

import logging
import struct

import numpy as np
from scipy.linalg import lapack
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_matrix, check_square, check_vector, parse_ridge
from .exceptions import FormatError, SingularityError, ValidationError

logger = logging.getLogger(__name__)

PCA_MAGIC = b"PMPC"
PCA_VERSION = 1
_PCA_HEADER = struct.Struct("<4sIII")

#: relative size of the ridge used when an automatic retry is needed
AUTO_RIDGE_SCALE = 1e-6
#: Cholesky pivots below ``PIVOT_RTOL * n * max(diag)`` count as zero
PIVOT_RTOL = np.finfo(np.float64).eps


def gram(X):
    """Return ``X.T @ X`` for a ``d x n`` matrix, exactly symmetric."""
    X = check_matrix(X, "X", allow_empty=True)
    G = X.T @ X
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def auto_ridge(A):
    """Ridge used on automatic retry: ``1e-6 * trace(A) / n``."""
    n = A.shape[0]
    return AUTO_RIDGE_SCALE * float(np.trace(A)) / n if n else 0.0


def _as_rhs(B, n):
    B = check_matrix(B, "B", ndim=1 if np.ndim(B) == 1 else 2)
    if B.shape[0] != n:
        raise ValidationError(f"B: expected {n} rows, got {B.shape[0]}")
    return B


def solve_spd(A, B, ridge=0.0):
    """Solve ``(A + ridge * I) S = B`` with a Cholesky factorization.

    Raises :class:`SingularityError` naming the zero-based pivot at which
    the factorization broke down when the shifted matrix is not positive
    definite.
    """
    A = check_square(A, "A")
    n = A.shape[0]
    B = _as_rhs(B, n)
    if ridge < 0 or not np.isfinite(ridge):
        raise ValidationError(f"ridge: must be finite and >= 0, got {ridge}")
    M = A + ridge * np.eye(n) if ridge else A.copy()
    c, info = lapack.dpotrf(M, lower=False, clean=True)
    if info > 0:
        raise SingularityError(
            f"matrix is not positive definite (pivot {info - 1}, ridge={ridge:g})",
            pivot=info - 1,
        )
    if info < 0:
        raise ValidationError(f"dpotrf rejected argument {-info}")
    # roundoff can leave a tiny positive pivot on an exactly singular matrix
    pivots = np.diag(c) ** 2
    tiny = np.flatnonzero(pivots <= PIVOT_RTOL * n * max(float(np.max(np.diag(M))), 0.0))
    if tiny.size:
        raise SingularityError(
            f"matrix is numerically singular (pivot {tiny[0]}, ridge={ridge:g})",
            pivot=int(tiny[0]),
        )
    S, info = lapack.dpotrs(c, B, lower=False)
    if info != 0:
        raise ValidationError(f"dpotrs rejected argument {-info}")
    return S


def solve_spd_auto(A, B, ridge="auto", force_ridge=False):
    """Solve an SPD system under a ridge policy.

    ``ridge`` is ``"off"``, ``"auto"`` or a fixed non-negative value.  With
    ``"auto"`` the unregularized solve is tried first and, on failure,
    retried once with :func:`auto_ridge`.  ``force_ridge`` skips the
    unregularized attempt (used for groups with ``n >= d``).

    Returns ``(S, ridge_used)``.
    """
    policy = parse_ridge(ridge)
    A = check_square(A, "A")
    if policy == "off":
        if force_ridge:
            raise SingularityError(
                "rank-deficient system (n >= d) and ridge is disabled", pivot=None
            )
        return solve_spd(A, B, 0.0), 0.0
    if policy != "auto":
        return solve_spd(A, B, policy), policy
    fallback = auto_ridge(A)
    if not force_ridge:
        try:
            return solve_spd(A, B, 0.0), 0.0
        except SingularityError as exc:
            logger.debug("retrying SPD solve with ridge %g after: %s", fallback, exc)
    if fallback <= 0:
        raise SingularityError("automatic ridge is zero (all-zero matrix)", pivot=0)
    return solve_spd(A, B, fallback), fallback


def solve_oracle(A, B):
    """Gaussian elimination with partial pivoting.

    Deliberately naive; it exists as an independent check on
    :func:`solve_spd` and is not used on any production path.
    """
    A = check_square(A, "A")
    n = A.shape[0]
    B = _as_rhs(B, n)
    vector_rhs = B.ndim == 1
    M = A.astype(np.float64, copy=True)
    R = B.reshape(n, -1).astype(np.float64, copy=True)
    tol = n * np.finfo(np.float64).eps * max(np.abs(M).max(), 1.0)
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) <= tol:
            raise SingularityError(f"zero pivot at column {k}", pivot=k)
        if p != k:
            M[[k, p]] = M[[p, k]]
            R[[k, p]] = R[[p, k]]
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            if f != 0.0:
                M[i, k:] -= f * M[k, k:]
                R[i] -= f * R[k]
    X = np.zeros_like(R)
    for k in range(n - 1, -1, -1):
        X[k] = (R[k] - M[k, k + 1:] @ X[k + 1:]) / M[k, k]
    return X[:, 0] if vector_rhs else X


def _fix_signs(components):
    """Flip rows so the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


class PCA(TransformerMixin, BaseEstimator):
    """Plain PCA (center and rotate) for descriptor compression.

    Parameters
    ----------
    n_components : int
        Output dimension ``d_out``.
    whiten : bool, default=False
        Divide projections by the square root of the component variance.
    renormalize : bool, default=True
        L2-normalize every projected vector (zero vectors stay zero).

    Attributes
    ----------
    mean_ : ndarray of shape (d,)
    components_ : ndarray of shape (d_out, d)
        Orthonormal rows, ordered by decreasing variance, with the
        largest-magnitude entry of each row positive.
    explained_variance_ : ndarray of shape (d_out,)
    explained_variance_ratio_ : ndarray of shape (d_out,)
    """

    def __init__(self, n_components=256, whiten=False, renormalize=True):
        self.n_components = n_components
        self.whiten = whiten
        self.renormalize = renormalize

    def fit(self, X, y=None):
        X = check_matrix(X, "X")
        n_samples, d = X.shape
        d_out = check_count(self.n_components, "n_components")
        if d_out > min(d, n_samples):
            raise ValidationError(
                f"n_components={d_out} exceeds min(d={d}, samples={n_samples})"
            )
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        denom = max(n_samples - 1, 1)
        cov = (Xc.T @ Xc) / denom
        cov = np.triu(cov) + np.triu(cov, 1).T
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = np.clip(eigvals[order], 0.0, None)
        eigvecs = eigvecs[:, order]
        total = float(eigvals.sum())
        self.components_ = _fix_signs(eigvecs[:, :d_out].T.copy())
        self.explained_variance_ = eigvals[:d_out]
        self.explained_variance_ratio_ = (
            eigvals[:d_out] / total if total > 0 else np.zeros(d_out)
        )
        self.n_features_in_ = d
        return self

    def _projection(self):
        if not self.whiten:
            return self.components_
        scale = np.sqrt(self.explained_variance_)
        scale[scale == 0] = 1.0
        return self.components_ / scale[:, None]

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_matrix(X, "X")
        if X.shape[1] != self.mean_.shape[0]:
            raise ValidationError(
                f"X: expected {self.mean_.shape[0]} features, got {X.shape[1]}"
            )
        Z = (X - self.mean_) @ self._projection().T
        if self.renormalize:
            Z = _l2_normalize_rows(Z)
        return Z


def _l2_normalize_rows(Z):
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return Z / norms


def pca_fit(data, d_out, whiten=False, renormalize=True):
    """Fit a :class:`PCA` on ``data`` (rows are samples)."""
    return PCA(n_components=d_out, whiten=whiten, renormalize=renormalize).fit(data)


def pca_apply(model, v, renormalize=None):
    """Project one descriptor ``v``; ``renormalize`` overrides the model flag."""
    check_is_fitted(model, "components_")
    v = check_vector(v, "v", dim=model.mean_.shape[0])
    z = model._projection() @ (v - model.mean_)
    if model.renormalize if renormalize is None else renormalize:
        norm = np.linalg.norm(z)
        if norm > 0:
            z = z / norm
    return z


def save_pca(model, path):
    """Write a fitted model in the ``PMPC`` format.

    Whitening is folded into the stored components, so a whitened model
    reloads as an unwhitened one with scaled rows.
    """
    check_is_fitted(model, "components_")
    comps = np.ascontiguousarray(model._projection(), dtype="<f4")
    d_out, d = comps.shape
    with open(path, "wb") as fh:
        fh.write(_PCA_HEADER.pack(PCA_MAGIC, PCA_VERSION, d, d_out))
        fh.write(np.ascontiguousarray(model.mean_, dtype="<f4").tobytes())
        fh.write(comps.tobytes())


def load_pca(path, renormalize=True):
    with open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) < _PCA_HEADER.size:
        raise FormatError("truncated header", offset=len(payload), path=path)
    magic, version, d, d_out = _PCA_HEADER.unpack_from(payload)
    if magic != PCA_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PCA_MAGIC!r}", offset=0, path=path)
    if version != PCA_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if d_out == 0 or d_out > d:
        raise FormatError(f"invalid dimensions d={d}, d_out={d_out}", offset=8, path=path)
    expected = _PCA_HEADER.size + 4 * (d + d_out * d)
    if len(payload) != expected:
        raise FormatError(
            f"payload size {len(payload)} != expected {expected}",
            offset=min(len(payload), expected), path=path,
        )
    body = np.frombuffer(payload, dtype="<f4", offset=_PCA_HEADER.size)
    if not np.all(np.isfinite(body)):
        bad = int(np.flatnonzero(~np.isfinite(body))[0])
        raise FormatError("non-finite value", offset=_PCA_HEADER.size + 4 * bad, path=path)
    model = PCA(n_components=int(d_out), whiten=False, renormalize=renormalize)
    model.mean_ = body[:d].astype(np.float64)
    model.components_ = body[d:].reshape(d_out, d).astype(np.float64)
    model.explained_variance_ = None
    model.explained_variance_ratio_ = None
    model.n_features_in_ = int(d)
    return model
