import numbers

import numpy as np

from .exceptions import ValidationError


def check_matrix(X, name="X", ndim=2, allow_empty=False):
    """Return ``X`` as a float64 array, rejecting non-finite entries."""
    try:
        arr = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: cannot convert to a real array ({exc})") from exc
    if arr.ndim != ndim:
        raise ValidationError(f"{name}: expected a {ndim}-D array, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValidationError(f"{name}: empty array with shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains NaN or infinite entries")
    return arr


def check_vector(v, name="v", dim=None):
    arr = check_matrix(v, name=name, ndim=1)
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"{name}: expected length {dim}, got {arr.shape[0]}")
    return arr


def check_square(A, name="A"):
    arr = check_matrix(A, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name}: expected a square matrix, got shape {arr.shape}")
    return arr


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name}: expected an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name}: must be >= {minimum}, got {value}")
    return int(value)


def parse_ridge(ridge):
    """Normalize a ridge policy to ``"off"``, ``"auto"`` or a float >= 0.

    ``None`` and ``0`` mean off.
    """
    if ridge is None:
        return "off"
    if isinstance(ridge, str):
        key = ridge.strip().lower()
        if key in ("off", "auto"):
            return key
        try:
            ridge = float(key)
        except ValueError:
            raise ValidationError(f"ridge: expected 'off', 'auto' or a number, got {ridge!r}")
    if isinstance(ridge, bool) or not isinstance(ridge, numbers.Real):
        raise ValidationError(f"ridge: expected 'off', 'auto' or a number, got {ridge!r}")
    ridge = float(ridge)
    if not np.isfinite(ridge) or ridge < 0:
        raise ValidationError(f"ridge: must be finite and >= 0, got {ridge}")
    return "off" if ridge == 0.0 else ridge
