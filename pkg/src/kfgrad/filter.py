"""Linear Kalman filter with a recorded tape of its intermediates.

The system is::

    x_k = F_k x_{k-1} + B_k u_k + w_k,    w_k ~ N(0, Q_k)
    y_k = H_k x_k + v_k,                  v_k ~ N(0, R_k)

for steps ``k = 0, ..., N-1`` (0-based), started from the posterior
``(x0, P0)`` at "step -1". Every model matrix may be static (2-D array) or
time-varying (3-D array whose first axis has length N).

:func:`run_filter` returns a :class:`FilterTape` holding one
:class:`StepRecord` per measurement. The tape stores ``I - K H`` and
``S^{-1} z`` so that the backward pass needs no factorization.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import (
    DimensionError,
    NotPositiveDefinite,
    SpdFactor,
    _potrf,
    multiply,
    solve_spd,
    symmetrize,
)

__all__ = [
    "FilterModel",
    "StepRecord",
    "FilterTape",
    "predict",
    "update",
    "run_filter",
]

_PARAMS = ("F", "B", "H", "Q", "R")


def _as_float(name, value, ndim_ok):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim not in ndim_ok:
        raise DimensionError(f"{name} must have ndim in {ndim_ok}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class FilterModel:
    """Linear-Gaussian state-space model.

    ``F, H, Q, R`` (and optional ``B``) are either static matrices or
    stacks of per-step matrices with leading axis of length N. ``u`` is an
    optional ``(N, p)`` input sequence; ``u[k]`` enters the prediction into
    step ``k``.
    """

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P0: np.ndarray
    x0: np.ndarray
    B: np.ndarray | None = None
    u: np.ndarray | None = None

    def __post_init__(self):
        for name in ("F", "H", "Q", "R"):
            object.__setattr__(self, name, _as_float(name, getattr(self, name), (2, 3)))
        object.__setattr__(self, "P0", _as_float("P0", self.P0, (2,)))
        object.__setattr__(self, "x0", _as_float("x0", self.x0, (1,)))
        if self.B is not None:
            object.__setattr__(self, "B", _as_float("B", self.B, (2, 3)))
        if self.u is not None:
            object.__setattr__(self, "u", _as_float("u", self.u, (2,)))
        if (self.B is None) != (self.u is None):
            raise ValueError("B and u must be given together")

        d, m = self.d, self.m
        expected = {"F": (d, d), "H": (m, d), "Q": (d, d), "R": (m, m)}
        if self.B is not None:
            expected["B"] = (d, self.u.shape[1])
        for name, shape in expected.items():
            if getattr(self, name).shape[-2:] != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        if self.P0.shape != (d, d):
            raise DimensionError(f"P0 has shape {self.P0.shape}, expected {(d, d)}")
        lengths = {getattr(self, n).shape[0] for n in _PARAMS
                   if getattr(self, n) is not None and getattr(self, n).ndim == 3}
        if self.u is not None:
            lengths.add(self.u.shape[0])
        if len(lengths) > 1:
            raise DimensionError(f"per-step sequences have inconsistent lengths {lengths}")

    @property
    def d(self) -> int:
        return self.x0.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[-2]

    @property
    def p(self) -> int:
        return 0 if self.u is None else self.u.shape[1]

    @property
    def horizon(self) -> int | None:
        """Length N implied by per-step arrays, or None for a fully static model."""
        for name in _PARAMS:
            arr = getattr(self, name)
            if arr is not None and arr.ndim == 3:
                return arr.shape[0]
        return None if self.u is None else self.u.shape[0]

    def is_static(self, name: str) -> bool:
        return getattr(self, name).ndim == 2

    def at(self, name: str, k: int) -> np.ndarray:
        arr = getattr(self, name)
        return arr if arr.ndim == 2 else arr[k]

    def replace(self, **changes) -> "FilterModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class StepRecord:
    """Forward-pass quantities of one filter step."""

    x_prior: np.ndarray
    x_post: np.ndarray
    P_prior: np.ndarray
    P_post: np.ndarray
    K: np.ndarray
    z: np.ndarray
    S_factor: SpdFactor
    Sinv_z: np.ndarray
    IKH: np.ndarray
    y: np.ndarray
    H: np.ndarray

    @property
    def S(self) -> np.ndarray:
        return self.S_factor.reconstruct()


@dataclass(frozen=True)
class FilterTape:
    model: FilterModel
    records: tuple[StepRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, k: int) -> StepRecord:
        return self.records[k]

    def __iter__(self):
        return iter(self.records)

    @property
    def x_post(self) -> np.ndarray:
        return np.array([r.x_post for r in self.records])

    @property
    def P_post(self) -> np.ndarray:
        return np.array([r.P_post for r in self.records])


def predict(x_post_prev, P_post_prev, model: FilterModel, k: int):
    """Prediction into step ``k``: returns ``(x_prior, P_prior)``."""
    F = model.at("F", k)
    x_prior = multiply(F, x_post_prev)
    if model.B is not None:
        x_prior = x_prior + multiply(model.at("B", k), model.u[k])
    P_prior = symmetrize(multiply(multiply(F, P_post_prev), F.T) + model.at("Q", k))
    return x_prior, P_prior


def update(x_prior, P_prior, y, model: FilterModel, k: int) -> StepRecord:
    """Measurement update at step ``k``.

    Raises
    ------
    NotPositiveDefinite
        If the innovation covariance ``S = H P H^T + R`` is not SPD.
    """
    H = model.at("H", k)
    PHt = multiply(P_prior, H.T)
    try:
        S_factor = _potrf(symmetrize(multiply(H, PHt) + model.at("R", k)))
    except NotPositiveDefinite as err:
        raise err.at_step(k, "innovation covariance S") from None
    K = solve_spd(S_factor, PHt.T).T
    z = y - multiply(H, x_prior)
    Sinv_z = solve_spd(S_factor, z)
    IKH = np.eye(x_prior.shape[0]) - multiply(K, H)
    return StepRecord(
        x_prior=x_prior,
        x_post=x_prior + multiply(K, z),
        P_prior=P_prior,
        P_post=symmetrize(multiply(IKH, P_prior)),
        K=K,
        z=z,
        S_factor=S_factor,
        Sinv_z=Sinv_z,
        IKH=IKH,
        y=y,
        H=H,
    )


def run_filter(model: FilterModel, ys: Sequence) -> FilterTape:
    """Filter the measurement sequence ``ys`` (shape ``(N, m)``)."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[1] != model.m:
        raise DimensionError(f"measurements must have shape (N, {model.m}), got {ys.shape}")
    if ys.shape[0] == 0:
        raise ValueError("empty measurement sequence")
    n_steps = model.horizon
    if n_steps is not None and n_steps != ys.shape[0]:
        raise DimensionError(
            f"model has {n_steps} per-step entries but {ys.shape[0]} measurements were given"
        )
    x, P = model.x0, model.P0
    records = []
    for k in range(ys.shape[0]):
        x_prior, P_prior = predict(x, P, model, k)
        rec = update(x_prior, P_prior, ys[k], model, k)
        records.append(rec)
        x, P = rec.x_post, rec.P_post
    return FilterTape(model, tuple(records))
