"""Dense numeric primitives shared by every other module.

All kernels take and return float64 numpy arrays. Matrices are 2-D arrays
of shape (rows, cols); vectors are 1-D. Kernels never mutate their inputs.

Work done by the kernels can be observed with :func:`count_ops`, which
installs a per-context :class:`OpCounter`. Counting is off by default.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "OpCounter",
    "count_ops",
    "record_comparisons",
    "matmul",
    "batched_matmul",
    "row_softmax",
    "l2_norm",
    "cosine_sim",
    "normalize_rows",
    "gather_rows",
    "scatter_add_rows",
]


@dataclass
class OpCounter:
    """Tally of multiply-accumulates and similarity comparisons."""

    macs: int = 0
    comparisons: int = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs


_active: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar(
    "asymreduce_op_counter", default=None
)


@contextlib.contextmanager
def count_ops():
    """Count kernel work performed inside the ``with`` block.

    Examples
    --------
    >>> import numpy as np
    >>> with count_ops() as c:
    ...     _ = matmul(np.ones((2, 3)), np.ones((3, 4)))
    >>> c.macs
    24
    """
    counter = OpCounter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)


def record_comparisons(n: int) -> None:
    counter = _active.get()
    if counter is not None:
        counter.comparisons += int(n)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with shape checking and MAC accounting."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    counter = _active.get()
    if counter is not None:
        counter.macs += a.shape[0] * a.shape[1] * b.shape[1]
    return a @ b


def batched_matmul(a, b) -> np.ndarray:
    """Stacked products ``a[i] @ b[i]`` for 3-D inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise InvalidInputError(
            f"batched_matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    counter = _active.get()
    if counter is not None:
        counter.macs += a.shape[0] * a.shape[1] * a.shape[2] * b.shape[2]
    return np.matmul(a, b)


def row_softmax(a, out: np.ndarray | None = None) -> np.ndarray:
    """Softmax over each row, stabilised by subtracting the row max.

    If ``out`` is given (it may alias ``a``) the result is written there.
    """
    a = _as_matrix(a, "a")
    if out is None:
        out = np.empty_like(a)
    np.subtract(a, a.max(axis=1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


def l2_norm(x) -> np.ndarray | float:
    """Euclidean norm of a vector, or of each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(np.sqrt(np.dot(x, x)))
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def cosine_sim(x, y) -> float:
    """Cosine similarity of two vectors; 0.0 if either has zero norm."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError(f"cosine_sim needs equal 1-D shapes, got {x.shape}, {y.shape}")
    nx = l2_norm(x)
    ny = l2_norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    # symmetric by construction: multiplication and dot product commute exactly
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def normalize_rows(x) -> np.ndarray:
    """Scale rows to unit norm; zero rows stay zero."""
    x = _as_matrix(x, "x")
    norms = l2_norm(x)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None]


def gather_rows(x, index) -> np.ndarray:
    x = _as_matrix(x, "x")
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise InvalidInputError("gather index out of range")
    return x[index]


def scatter_add_rows(target: np.ndarray, index, rows) -> np.ndarray:
    """Return a copy of ``target`` with ``rows[i]`` added into ``target[index[i]]``.

    Repeated indices accumulate.
    """
    out = np.array(target, dtype=np.float64, copy=True)
    index = np.asarray(index, dtype=np.intp)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] != index.shape[0]:
        raise InvalidInputError("scatter index/row count mismatch")
    np.add.at(out, index, rows)
    return out
