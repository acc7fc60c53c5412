"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InvalidInputError

#: camera token + four register tokens, stored first in every frame
SPECIAL_COUNT = 5


def check_tokens(X, *, n_special: int = SPECIAL_COUNT, d: int | None = None) -> np.ndarray:
    """Validate a token tensor of shape (frames, tokens_per_frame, dim).

    Returns a float64 array. Raises InvalidInputError for wrong rank, too few
    tokens per frame to hold the special tokens, a feature-dim mismatch, or
    non-finite entries.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise InvalidInputError(
            f"expected token tensor of shape (S, P, d), got ndim={X.ndim}"
        )
    S, P, dim = X.shape
    if S < 1 or dim < 1:
        raise InvalidInputError(f"empty token tensor {X.shape}")
    if P <= n_special:
        raise InvalidInputError(
            f"P={P} tokens per frame leaves no patch tokens after {n_special} special tokens"
        )
    if d is not None and dim != d:
        raise InvalidInputError(f"feature dim {dim} does not match model dim {d}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("token tensor contains NaN or Inf")
    return X


def check_flat_tokens(x, S: int, P: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != S * P:
        raise InvalidInputError(
            f"expected {S * P} flattened tokens (S={S}, P={P}), got shape {x.shape}"
        )
    return x


def check_factor(r, name: str = "r") -> int:
    """Reduction factors and group sizes are integers >= 1."""
    if isinstance(r, bool) or not isinstance(r, numbers.Integral):
        raise InvalidInputError(f"{name} must be an integer, got {r!r}")
    if r < 1:
        raise InvalidInputError(f"{name} must be >= 1, got {r}")
    return int(r)
