"""Input validation helpers shared by the library modules."""

import numpy as np

from .exceptions import IndexSetError


def check_index_array(indices, shape=None, allow_duplicates=False, name="indices"):
    """Coerce ``indices`` to an ``(N, 2)`` int array of 0-based (row, col) pairs.

    Raises IndexSetError on malformed input, out-of-range entries, or
    repeated pairs (unless ``allow_duplicates``).
    """
    arr = np.asarray(indices)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.intp)
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise IndexSetError(f"{name} must be a sequence of (row, col) pairs")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise IndexSetError(f"{name} must be integer valued")
    arr = arr.astype(np.intp)
    if shape is not None:
        m1, m2 = shape
        bad = (arr[:, 0] < 0) | (arr[:, 0] >= m1) | (arr[:, 1] < 0) | (arr[:, 1] >= m2)
        if np.any(bad):
            i, j = arr[np.argmax(bad)]
            raise IndexSetError(f"{name}: index ({i}, {j}) outside a {m1}x{m2} matrix")
    if not allow_duplicates and len(arr) > 1:
        uniq, counts = np.unique(arr, axis=0, return_counts=True)
        if np.any(counts > 1):
            i, j = uniq[np.argmax(counts > 1)]
            raise IndexSetError(f"{name}: index ({i}, {j}) repeated")
    return arr


def index_pair(index, shape=None, name="index"):
    arr = check_index_array([index], shape=shape, name=name)
    return int(arr[0, 0]), int(arr[0, 1])


def check_orthonormal(basis, tol=1e-6):
    """Return ``basis`` as a float array, raising if its Gram matrix is not I."""
    from .exceptions import InvalidBasisError

    b = np.asarray(basis, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.ndim != 2:
        raise InvalidBasisError("basis must be a 2-d array")
    gram = b.T @ b
    dev = np.max(np.abs(gram - np.eye(b.shape[1]))) if b.size else 0.0
    if dev > tol:
        raise InvalidBasisError(f"basis columns not orthonormal (Gram deviation {dev:.2e})")
    return b


def complement_mask(indices, shape):
    """Boolean ``shape`` mask that is True off the observed set."""
    mask = np.ones(shape, dtype=bool)
    if len(indices):
        mask[indices[:, 0], indices[:, 1]] = False
    return mask


def complement_indices(indices, shape):
    """Row-major list of unobserved (row, col) pairs."""
    return np.argwhere(complement_mask(indices, shape))
