"""Input validation helpers.

Every public entry point funnels caller data through these checks so that
precondition violations surface as :class:`~occ4d.exceptions.InputError`
with a message naming the offending argument.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InputError


def require(condition: bool, message: str) -> None:
    """Raise :class:`InputError` with *message* unless *condition* holds."""
    if not condition:
        raise InputError(message)


def as_float_array(
    x,
    name: str,
    *,
    ndim: int | None = None,
    shape: tuple[int | None, ...] | None = None,
    allow_empty: bool = True,
) -> np.ndarray:
    """Coerce *x* to a float64 ndarray and validate its layout.

    Parameters
    ----------
    x : array-like
        Input data.
    name : str
        Argument name used in error messages.
    ndim : int, optional
        Required number of dimensions.
    shape : tuple, optional
        Required shape; ``None`` entries match any extent.
    allow_empty : bool
        Whether a zero-size array is acceptable.

    Returns
    -------
    numpy.ndarray
        Float64 array with all entries finite.
    """
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot interpret as a float array: {exc}") from None
    if ndim is not None and arr.ndim != ndim:
        raise InputError(f"{name}: expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise InputError(f"{name}: must not be empty")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: contains non-finite values")
    return arr


def as_int_array(
    x,
    name: str,
    *,
    ndim: int | None = None,
    shape: tuple[int | None, ...] | None = None,
) -> np.ndarray:
    """Coerce *x* to an int64 ndarray, rejecting fractional values."""
    try:
        arr = np.asarray(x)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot interpret as an array: {exc}") from None
    if arr.dtype.kind == "f":
        if arr.size and not np.all(np.isfinite(arr)):
            raise InputError(f"{name}: contains non-finite values")
        rounded = np.rint(arr)
        if arr.size and not np.all(arr == rounded):
            raise InputError(f"{name}: expected integers, found fractional values")
        arr = rounded
    elif arr.dtype.kind not in "iub":
        raise InputError(f"{name}: expected an integer array, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if ndim is not None and arr.ndim != ndim:
        raise InputError(f"{name}: expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def check_positive(value: float, name: str) -> float:
    """Validate a strictly positive finite scalar."""
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise InputError(f"{name}: must be a positive finite number, got {value}")
    return value


def check_raster(values, name: str, *, dtype=np.float64) -> np.ndarray:
    """Validate a 2-D raster with finite entries and return it as *dtype*."""
    arr = as_float_array(values, name, ndim=2, allow_empty=False)
    return arr.astype(dtype, copy=False)


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise InputError(
            f"{name_a} and {name_b} must have the same shape, "
            f"got {a.shape} vs {b.shape}"
        )


def check_unit_range(arr: np.ndarray, name: str) -> None:
    """Validate that every entry lies in [0, 1]."""
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputError(f"{name}: values must lie in [0, 1]")
