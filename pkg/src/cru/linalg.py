"""Dense vector/matrix helpers shared by the STL and cell code.

Vectors and matrices are plain float64 numpy arrays. The helpers only add
shape checking with readable messages; every function also accepts a
leading batch axis on the vector argument so the training code can run
whole mini-batches through the same path.
"""

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_vec(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    return v


def as_mat(values) -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``m @ v``; ``v`` may carry leading batch axes."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim < 1 or m.shape[1] != v.shape[-1]:
        raise ShapeError(
            f"matvec: matrix {m.shape} incompatible with vector {v.shape}"
        )
    return v @ m.T


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def sigmoid(v) -> np.ndarray:
    return expit(np.asarray(v, dtype=np.float64))


def tanh(v) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def sigmoid_grad(y) -> np.ndarray:
    """Derivative of the sigmoid expressed through its output ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return y * (1.0 - y)


def tanh_grad(y) -> np.ndarray:
    """Derivative of tanh expressed through its output ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return 1.0 - y * y
