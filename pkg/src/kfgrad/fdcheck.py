"""Central finite-difference gradients of the full model -> filter -> loss map.

This is the reference every analytic gradient is checked against. Matrix
coordinates are perturbed as symmetric pairs by default; covariance
factors (``L_R``, ``L_Q``, ``L_P0``) can be perturbed instead, which keeps
the covariance SPD for any step size.

A parameter of step ``k`` (``Q``/``R`` with ``step=k``, or ``y``) cannot
affect steps before ``k``, so those steps are filtered once and only the
tail from ``k`` on is differentiated; the prefix would cancel exactly in
the central difference anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filter import FilterModel, run_filter
from .linalg import NotPositiveDefinite, cholesky
from .loss import total_loss
from .sensitivity import ParamSelector, assemble_symmetric

__all__ = [
    "FdConfig", "FdError", "fd_gradient", "fd_full", "fd_scalar", "loss_at",
    "relative_discrepancy",
]

FACTOR_TARGETS = {"L_R": "R", "L_Q": "Q", "L_P0": "P0"}


class FdError(RuntimeError):
    pass


@dataclass(frozen=True)
class FdConfig:
    """Central differences with step ``rel_step * max(1, |theta|)``.

    With ``richardson`` the estimates at ``h`` and ``h/2`` are combined as
    ``(4 D(h/2) - D(h)) / 3``.
    """

    rel_step: float = float(np.cbrt(np.finfo(np.float64).eps))
    richardson: bool = False

    def __post_init__(self):
        if not self.rel_step > 0:
            raise ValueError("finite-difference step must be positive")

    def step_for(self, theta: float) -> float:
        return self.rel_step * max(1.0, abs(theta))


def loss_at(model: FilterModel, ys, spec) -> float:
    return total_loss(run_filter(model, ys), spec)


class _Shifted:
    """Loss of a tail run: step ``j`` of the tail is step ``j + offset``."""

    def __init__(self, spec, offset):
        self.spec, self.offset = spec, offset

    def step(self, rec, k):
        return self.spec.step(rec, k + self.offset)

    def value(self, rec, k):
        value = getattr(self.spec, "value", None)
        if value is not None:
            return value(rec, k + self.offset)
        l_prior, l_post, _ = self.spec.step(rec, k + self.offset)
        return l_prior + l_post


def _steps(model: FilterModel, start: int, stop: int | None = None, **changes) -> FilterModel:
    """Model with per-step arrays restricted to ``start:stop``."""
    for name in ("F", "H", "Q", "R", "B"):
        arr = getattr(model, name)
        if arr is not None and arr.ndim == 3:
            changes[name] = arr[start:stop]
    if model.u is not None:
        changes["u"] = model.u[start:stop]
    return model.replace(**changes)


def _tail(model: FilterModel, ys, spec, k: int, prefix=None):
    """Problem restricted to steps ``k..N-1``, started from the filtered
    state after step ``k - 1``."""
    if k == 0:
        return model, ys, spec
    ys = np.asarray(ys, dtype=np.float64)
    if prefix is None:
        prefix = run_filter(_steps(model, 0, k), ys[:k])[k - 1]
    tail = _steps(model, k, None, x0=prefix.x_post, P0=prefix.P_post)
    return tail, ys[k:], _Shifted(spec, k)


def fd_scalar(f, theta: float, cfg: FdConfig = FdConfig()) -> float:
    """Central difference of a scalar function of one scalar."""
    h = cfg.step_for(theta)

    def central(h):
        return (f(theta + h) - f(theta - h)) / (2.0 * h)

    if cfg.richardson:
        return (4.0 * central(h / 2) - central(h)) / 3.0
    return central(h)


def _perturbed(model: FilterModel, ys, sel: ParamSelector, delta: float):
    """Model and measurements with the selected coordinate moved by ``delta``."""
    t = sel.target
    if t in FACTOR_TARGETS:
        name = FACTOR_TARGETS[t]
        base = getattr(model, name)
        if base.ndim != 2:
            raise FdError(f"{name} is time-varying; factor perturbation needs it static")
        L = cholesky(base).lower.copy()
        i, j = sel.index
        if j > i:
            raise IndexError("factor coordinates must be on or below the diagonal")
        L[i, j] += delta
        return model.replace(**{name: L @ L.T}), ys
    E = sel.direction(model) * delta
    if t == "x0":
        return model.replace(x0=model.x0 + E), ys
    if t == "P0":
        return model.replace(P0=model.P0 + E), ys
    if t == "y":
        ys = np.array(ys, dtype=np.float64)
        ys[sel.step] += E
        return model, ys
    arr = getattr(model, t)
    if sel.step is None:
        return model.replace(**{t: arr + E}), ys
    N = np.shape(ys)[0]
    stacked = np.array(arr if arr.ndim == 3 else np.broadcast_to(arr, (N,) + arr.shape))
    stacked[sel.step] += E
    return model.replace(**{t: stacked}), ys


def _coordinate_value(model: FilterModel, ys, sel: ParamSelector) -> float:
    t = sel.target
    if t in FACTOR_TARGETS:
        return float(cholesky(getattr(model, FACTOR_TARGETS[t])).lower[sel.index])
    if t == "x0":
        return float(model.x0[sel.index[0]])
    if t == "y":
        return float(np.asarray(ys)[sel.step, sel.index[0]])
    arr = getattr(model, t)
    if arr.ndim == 3:
        arr = arr[0 if sel.step is None else sel.step]
    return float(arr[sel.index])


def fd_gradient(model: FilterModel, ys, spec, sel: ParamSelector,
                cfg: FdConfig = FdConfig(), _prefix=None) -> float:
    """Central-difference derivative of the total loss along ``sel``.

    For a symmetric-pair selector off the diagonal the result is twice the
    symmetric-part gradient entry.
    """
    theta = _coordinate_value(model, ys, sel)
    if sel.step is not None and sel.target in ("Q", "R", "y"):
        sel.direction(model)  # validate before slicing
        k = sel.step
        if not 0 <= k < np.shape(ys)[0]:
            raise IndexError(f"step {k} out of range")
        model, ys, spec = _tail(model, ys, spec, k, _prefix)
        sel = ParamSelector(sel.target, sel.index, 0, sel.symmetric_pair)

    def f(value):
        m, y = _perturbed(model, ys, sel, value - theta)
        try:
            return loss_at(m, y, spec)
        except NotPositiveDefinite as err:
            raise FdError(
                f"perturbing {sel.target}{sel.index} broke positive definiteness ({err}); "
                "shrink the step or perturb the square-root factor instead"
            ) from err

    return fd_scalar(f, theta, cfg)


def fd_full(model: FilterModel, ys, spec, target: str, cfg: FdConfig = FdConfig(),
            step: int | None = None) -> np.ndarray:
    """Finite-difference gradient of a whole parameter.

    ``P0``/``Q``/``R`` give the symmetric-part gradient; ``L_R``/``L_Q``/
    ``L_P0`` the lower-triangular factor gradient; ``x0`` a vector; ``y``
    an ``(N, m)`` array.
    """
    prefixes = None
    if target == "y" or (step is not None and target in ("Q", "R")):
        tape = run_filter(model, ys)
        prefixes = [None] + [tape[k] for k in range(len(tape) - 1)]
    if target in ("P0", "Q", "R"):
        n = model.m if target == "R" else model.d
        pre = prefixes[step] if prefixes else None
        return assemble_symmetric(
            n, lambda i, j: fd_gradient(model, ys, spec, ParamSelector(target, (i, j), step),
                                        cfg, pre)
        )
    if target in FACTOR_TARGETS:
        n = model.m if target == "L_R" else model.d
        G = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1):
                G[i, j] = fd_gradient(model, ys, spec, ParamSelector(target, (i, j)), cfg)
        return G
    if target == "x0":
        return np.array([fd_gradient(model, ys, spec, ParamSelector("x0", (i,)), cfg)
                         for i in range(model.d)])
    if target == "y":
        N = np.shape(ys)[0]
        return np.array([[fd_gradient(model, ys, spec, ParamSelector("y", (i,), k), cfg,
                                      prefixes[k])
                          for i in range(model.m)] for k in range(N)])
    raise ValueError(f"unsupported target {target!r}")


def relative_discrepancy(a, ref, rtol: float, atol: float = 1e-8):
    """Worst entrywise error of ``a`` against ``ref``.

    Returns ``(err, index)`` with ``err = |a - ref| / max(|ref|, atol / rtol)``,
    so ``err <= rtol`` exactly when ``|a - ref| <= max(rtol |ref|, atol)``.
    """
    a = np.asarray(a, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if a.shape != ref.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {ref.shape}")
    if a.size == 0:
        return 0.0, ()
    err = np.abs(a - ref) / np.maximum(np.abs(ref), atol / rtol)
    idx = np.unravel_index(int(np.argmax(err)), err.shape)
    return float(err[idx]), tuple(int(i) for i in idx)
