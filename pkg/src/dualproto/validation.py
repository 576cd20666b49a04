"""Input validation helpers shared by the estimator, CLI, and data layer."""

import numpy as np

from .errors import ConfigError, ShapeMismatchError

UNIT_NORM_TOL = 1e-6


def as_float_matrix(x, name="X"):
    """Coerce to a finite 2-d float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-d, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeMismatchError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{name} contains non-finite values")
    return arr


def check_unit_rows(x, name="X", tol=UNIT_NORM_TOL, renormalize=True):
    """Validate (or restore) unit-norm rows.

    Rows already within `tol` of unit norm are kept bit-identical; rows
    further out are renormalized when `renormalize` else rejected.
    """
    arr = as_float_matrix(x, name)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < 1e-30):
        raise ConfigError(f"{name} contains zero rows")
    off = np.abs(norms - 1.0) > tol
    if off.any():
        if not renormalize:
            raise ConfigError(f"{name} has {int(off.sum())} rows off unit norm")
        arr = arr.copy()
        arr[off] = arr[off] / norms[off, None]
    return arr


def check_label_pairs(y, num_states=None, num_objects=None, name="y"):
    """Coerce to an (n, 2) int64 array of (state, object) index pairs."""
    arr = np.asarray(y, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeMismatchError(f"{name} must have shape (n, 2), got {arr.shape}")
    if arr.min(initial=0) < 0:
        raise ConfigError(f"{name} contains negative indices")
    if num_states is not None and arr[:, 0].max(initial=-1) >= num_states:
        raise ConfigError(f"{name} state index exceeds {num_states - 1}")
    if num_objects is not None and arr[:, 1].max(initial=-1) >= num_objects:
        raise ConfigError(f"{name} object index exceeds {num_objects - 1}")
    return arr


def check_fraction(value, name):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    return v


def check_positive_int(value, name):
    v = int(value)
    if v <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value}")
    return v


def check_positive(value, name):
    v = float(value)
    if not v > 0.0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return v
