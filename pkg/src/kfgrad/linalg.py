"""Dense linear-algebra kernel shared by the filter and its derivatives.

Matrices are plain float64 numpy arrays. SPD inverses are never formed
explicitly: they are applied through a Cholesky factor and triangular
solves (LAPACK ``potrf``/``potrs``).

Every product, factorization and solve goes through this module so that
an :class:`OpCounter` can audit the cost of a computation::

    with count_ops() as ops:
        backward(tape, loss)
    ops.multiplies, ops.factorizations
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "DimensionError",
    "NotPositiveDefinite",
    "SpdFactor",
    "OpCounter",
    "count_ops",
    "multiply",
    "outer",
    "cholesky",
    "solve_spd",
    "logdet",
    "symmetrize",
    "is_symmetric",
]

SYMMETRY_RTOL = 1e-10


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the 0-based index of the failing pivot; ``step`` is the
    filter step at which the failure happened, when known.
    """

    def __init__(self, pivot: int, step: int | None = None, what: str = "matrix"):
        self.pivot = pivot
        self.step = step
        self.what = what
        msg = f"{what} is not positive definite (pivot {pivot})"
        if step is not None:
            msg += f" at step {step}"
        super().__init__(msg)

    def at_step(self, step: int, what: str | None = None) -> "NotPositiveDefinite":
        return NotPositiveDefinite(self.pivot, step, what or self.what)


@dataclass
class OpCounter:
    """Tally of scalar multiplies and factorization work."""

    multiplies: int = 0
    factorizations: int = 0
    solves: int = 0
    calls: dict = field(default_factory=dict)

    def _tick(self, name: str) -> None:
        self.calls[name] = self.calls.get(name, 0) + 1


_active: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar(
    "kfgrad_op_counter", default=None
)


@contextlib.contextmanager
def count_ops():
    """Count kernel operations executed inside the ``with`` block."""
    counter = OpCounter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix (or matrix-vector) product ``a @ b``."""
    try:
        out = a @ b
    except ValueError as exc:
        raise DimensionError(
            f"cannot multiply shapes {np.shape(a)} and {np.shape(b)}"
        ) from exc
    counter = _active.get()
    if counter is not None:
        # scalar multiplies of a dense product: rows(a) * inner * cols(b)
        counter.multiplies += a.size * (b.shape[1] if b.ndim == 2 else 1)
        counter._tick("multiply")
    return out


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Outer product of two vectors."""
    counter = _active.get()
    if counter is not None:
        counter.multiplies += a.size * b.size
        counter._tick("outer")
    return np.multiply.outer(a, b)


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``lower`` of an SPD matrix ``A = lower @ lower.T``."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def is_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    scale = max(np.abs(a).max(initial=0.0), 1e-300)
    return bool(np.abs(a - a.T).max(initial=0.0) <= rtol * scale)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Symmetric part ``(a + a.T) / 2``; the result is exactly symmetric."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"symmetrize needs a square matrix, got {a.shape}")
    return (a + a.T) * 0.5


def _potrf(a: np.ndarray) -> SpdFactor:
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:  # pragma: no cover - LAPACK argument error
        raise ValueError(f"dpotrf: illegal argument {-info}")
    counter = _active.get()
    if counter is not None:
        counter.factorizations += 1
        counter._tick("cholesky")
    return SpdFactor(c)


def cholesky(a: np.ndarray) -> SpdFactor:
    """Cholesky factor of a symmetric positive-definite matrix.

    The input must be symmetric to within a relative tolerance of 1e-10;
    it is symmetrized before factoring.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is non-positive; ``err.pivot`` is its 0-based index.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got {a.shape}")
    if not is_symmetric(a):
        raise ValueError("cholesky input is not symmetric")
    return _potrf(symmetrize(a))


def solve_spd(f: SpdFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) X = b`` for X using the factor ``f``."""
    if b.shape[0] != f.lower.shape[0]:
        raise DimensionError(
            f"factor of dim {f.lower.shape[0]} cannot solve rhs of shape {b.shape}"
        )
    x, info = lapack.dpotrs(f.lower, b, lower=1)
    if info != 0:  # pragma: no cover - LAPACK argument error
        raise ValueError(f"dpotrs: illegal argument {-info}")
    counter = _active.get()
    if counter is not None:
        n = f.lower.shape[0]
        counter.solves += 1
        counter.multiplies += n * n * (b.shape[1] if b.ndim == 2 else 1)
        counter._tick("solve_spd")
    return x


def logdet(f: SpdFactor) -> float:
    """log det of the factored matrix."""
    return 2.0 * float(np.log(f.lower.diagonal()).sum())
