"""Per-step losses and their local gradients.

A loss is a sum over steps of a prior term ``l_prior(x_prior, P_prior, R, y)``
and a posterior term ``l_post(x_post, P_post)``. A loss object exposes
``step(record, k) -> (l_prior, l_post, LossLocalGrads)`` and may add a
cheaper ``value(record, k) -> l_prior + l_post`` used when no gradient is
needed.

Matrix-valued local gradients are symmetric-part gradients. Fields left as
``None`` are identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .filter import FilterTape, StepRecord
from .linalg import DimensionError, logdet, multiply, outer, solve_spd, symmetrize

__all__ = [
    "LossLocalGrads",
    "LossSpec",
    "NllLoss",
    "MseLoss",
    "ZeroLoss",
    "nll_step",
    "mse_step",
    "total_loss",
]


@dataclass(frozen=True)
class LossLocalGrads:
    dl_xprior: np.ndarray | None = None
    dl_Pprior: np.ndarray | None = None
    dl_R: np.ndarray | None = None
    dl_y: np.ndarray | None = None
    dl_xpost: np.ndarray | None = None
    dl_Ppost: np.ndarray | None = None


class LossSpec(Protocol):
    def step(self, rec: StepRecord, k: int) -> tuple[float, float, LossLocalGrads]: ...


def nll_step(rec: StepRecord):
    """Energy term ``log det S + z^T S^{-1} z`` and its local gradients."""
    s = rec.Sinv_z
    H = rec.H
    Sinv = solve_spd(rec.S_factor, np.eye(s.shape[0]))
    dl_R = symmetrize(Sinv - outer(s, s))
    Ht_s = multiply(H.T, s)
    grads = LossLocalGrads(
        dl_xprior=-2.0 * Ht_s,
        dl_Pprior=symmetrize(multiply(multiply(H.T, dl_R), H)),
        dl_R=dl_R,
        dl_y=2.0 * s,
    )
    l_prior = logdet(rec.S_factor) + float(rec.z @ s)
    return l_prior, 0.0, grads


def mse_step(rec: StepRecord, truth_state, weight):
    """Weighted squared error of the posterior mean against ground truth."""
    truth_state = np.asarray(truth_state, dtype=np.float64)
    if truth_state.shape != rec.x_post.shape or weight.shape != (truth_state.size,) * 2:
        raise DimensionError("truth/weight dimensions do not match the state")
    e = rec.x_post - truth_state
    We = multiply(weight, e)
    return 0.0, float(e @ We), LossLocalGrads(dl_xpost=2.0 * We)


class NllLoss:
    """Negative log marginal likelihood (up to ``N m/2 log 2 pi``)."""

    def step(self, rec, k):
        return nll_step(rec)

    def value(self, rec, k):
        return logdet(rec.S_factor) + float(rec.z @ rec.Sinv_z)

    def __repr__(self):
        return "NllLoss()"


class MseLoss:
    """Squared error of filtered states against ``truth`` (shape ``(N, d)``)."""

    def __init__(self, truth, weight=None):
        self.truth = np.asarray(truth, dtype=np.float64)
        d = self.truth.shape[1]
        self.weight = np.eye(d) if weight is None else np.asarray(weight, dtype=np.float64)
        if self.weight.shape != (d, d):
            raise DimensionError(f"weight must be {d}x{d}")
        if not np.array_equal(self.weight, self.weight.T):
            raise ValueError("weight must be symmetric")

    def step(self, rec, k):
        return mse_step(rec, self.truth[k], self.weight)

    def value(self, rec, k):
        e = rec.x_post - self.truth[k]
        return float(e @ self.weight @ e)

    def __repr__(self):
        return f"MseLoss(N={len(self.truth)})"


class ZeroLoss:
    """Identically zero loss; every gradient of it vanishes."""

    def step(self, rec, k):
        return 0.0, 0.0, LossLocalGrads()


def total_loss(tape: FilterTape, spec: LossSpec) -> float:
    value = getattr(spec, "value", None)
    total = 0.0
    for k, rec in enumerate(tape):
        if value is not None:
            total += value(rec, k)
        else:
            l_prior, l_post, _ = spec.step(rec, k)
            total += l_prior + l_post
    return total
