"""Dense 64-bit linear algebra and activation primitives.

Conventions used throughout the package:

* a weight matrix has shape ``(m, n + 1)`` with the bias stored in the
  trailing column, so applying it to activations means multiplying by
  ``[a, 1]``;
* a batch of activations has shape ``(samples, n)``, one row per sample.

Every product of a weight matrix with a batch (forward, feedback, or the
outer-product accumulation used for weight gradients) bumps the module-wide
``matmul_counter`` so compute accounting can be verified at runtime.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity", "sigmoid")


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


class MatmulCounter:
    """Running count of matrix-matrix products executed by this module.

    Instrumentation only; meant for single-threaded measurement runs.
    """

    def __init__(self) -> None:
        self.count = 0

    def bump(self) -> None:
        self.count += 1

    def reset(self) -> int:
        old = self.count
        self.count = 0
        return old


matmul_counter = MatmulCounter()


def as_batch(x) -> np.ndarray:
    """Coerce to a float64 batch of shape (samples, dim).

    A 1-D input is treated as a single sample.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected 1-D or 2-D data, got shape {a.shape}")
    return a


def augment_ones(a: np.ndarray) -> np.ndarray:
    """Append a column of ones: per row, [a_row, 1]."""
    a = as_batch(a)
    return np.hstack([a, np.ones((a.shape[0], 1))])


def affine(W, a) -> np.ndarray:
    """Apply a bias-augmented weight matrix to a batch.

    Each output row is ``W @ [a_row, 1]``; W has shape (m, n + 1) and the
    result has shape (samples, m).
    """
    W = np.asarray(W, dtype=np.float64)
    a = as_batch(a)
    if W.ndim != 2:
        raise ShapeError(f"weight matrix must be 2-D, got shape {W.shape}")
    if W.shape[1] != a.shape[1] + 1:
        raise ShapeError(
            f"weight matrix expects {W.shape[1] - 1} input features, batch has {a.shape[1]}"
        )
    matmul_counter.bump()
    return a @ W[:, :-1].T + W[:, -1]


def feedback(W, e) -> np.ndarray:
    """Project errors back through a weight matrix, dropping the bias column.

    Per row this is ``W[:, :-1].T @ e_row``; W has shape (m, n + 1), e has
    shape (samples, m), the result (samples, n).
    """
    W = np.asarray(W, dtype=np.float64)
    e = as_batch(e)
    if W.ndim != 2 or W.shape[0] != e.shape[1]:
        raise ShapeError(
            f"cannot feed back errors of dim {e.shape[1]} through weights of shape {W.shape}"
        )
    matmul_counter.bump()
    return e @ W[:, :-1]


def outer_accum(e, a) -> np.ndarray:
    """Sum over samples of the outer product of e_row with [a_row, 1].

    Returns a matrix of shape (e.dim, a.dim + 1); the trailing column
    accumulates e itself, pairing with the bias convention of `affine`.
    """
    e = as_batch(e)
    a = as_batch(a)
    if e.shape[0] != a.shape[0]:
        raise ShapeError(
            f"sample counts differ: errors {e.shape[0]}, activities {a.shape[0]}"
        )
    matmul_counter.bump()
    return e.T @ augment_ones(a)


def apply_act(kind: str, x) -> np.ndarray:
    """Elementwise activation f(x) for kind in {relu, tanh, identity, sigmoid}."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    if kind == "sigmoid":
        # tanh form is overflow-safe for large |x|
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    raise ValueError(f"unknown activation kind: {kind!r}")


def apply_act_deriv(kind: str, x) -> np.ndarray:
    """Elementwise derivative f'(x); relu'(0) is defined as 0."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.where(x > 0.0, 1.0, 0.0)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(x)
    if kind == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return s * (1.0 - s)
    raise ValueError(f"unknown activation kind: {kind!r}")


def softmax(x) -> np.ndarray:
    """Row-wise softmax with max-shift for overflow safety."""
    x = as_batch(x)
    z = x - x.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def mse(y, p) -> float:
    """Mean over samples of half the squared error, (1/N) sum_n 0.5 ||y_n - p_n||^2."""
    y = as_batch(y)
    p = as_batch(p)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {p.shape}")
    d = y - p
    return 0.5 * float(np.sum(d * d)) / y.shape[0]
