"""Closed-form reverse-mode gradients of a filter loss.

One backward sweep over a :class:`~kfgrad.filter.FilterTape` yields the
gradient of the total loss with respect to ``P0``, ``x0``, every ``Q_k``,
every ``R_k`` and every measurement ``y_k``. The sweep uses matrix
products only: inverses of ``S_k`` enter through the stored ``S_k^{-1} z_k``
and through the identity ``(I - K H)^T H^T R^{-1} = H^T S^{-1}``, so no
factorization is performed.

Matrix gradients are symmetric-part gradients: a symmetric perturbation
``dM`` changes the loss by ``sum(G * dM)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filter import FilterModel, FilterTape
from .linalg import DimensionError, cholesky, multiply, outer, symmetrize

__all__ = ["GradientSet", "backward", "sqrt_factor_grad", "grad_wrt", "GRADIENT_TAGS"]


@dataclass(frozen=True)
class GradientSet:
    """Gradients of the total loss.

    ``dQ_steps[k]`` and ``dR_steps[k]`` are gradients with respect to the
    step-``k`` covariances; ``dQ_static``/``dR_static`` are their sums, i.e.
    the gradients for a time-invariant parameter.
    """

    loss: float
    dP0: np.ndarray
    dx0: np.ndarray
    dQ_steps: np.ndarray
    dR_steps: np.ndarray
    dy: np.ndarray

    @property
    def dQ_static(self) -> np.ndarray:
        return self.dQ_steps.sum(axis=0)

    @property
    def dR_static(self) -> np.ndarray:
        return self.dR_steps.sum(axis=0)


def backward(tape: FilterTape, spec) -> GradientSet:
    """Run the adjoint recursion from the last step back to the prior."""
    model = tape.model
    N = len(tape)
    d, m = model.d, model.m
    dQ = np.empty((N, d, d))
    dR = np.empty((N, m, m))
    dy = np.empty((N, m))
    loss = 0.0
    ax_prior = aP_prior = None
    F_next = None

    for k in range(N - 1, -1, -1):
        rec = tape.records[k]
        l_prior, l_post, g = spec.step(rec, k)
        if g is None:
            raise DimensionError(f"loss returned no local gradients at step {k}")
        loss += l_prior + l_post

        # adjoints of the posterior at step k
        if F_next is None:
            ax = np.zeros(d) if g.dl_xpost is None else g.dl_xpost
            aP = np.zeros((d, d)) if g.dl_Ppost is None else g.dl_Ppost
        else:
            ax = multiply(F_next.T, ax_prior)
            aP = symmetrize(multiply(multiply(F_next.T, aP_prior), F_next))
            if g.dl_xpost is not None:
                ax = ax + g.dl_xpost
            if g.dl_Ppost is not None:
                aP = aP + g.dl_Ppost

        IKH, K, s = rec.IKH, rec.K, rec.Sinv_z
        # (I-KH)^T H^T R^{-1} z == H^T S^{-1} z
        w = multiply(rec.H.T, s)
        v = multiply(IKH.T, ax)
        ax_prior = v if g.dl_xprior is None else v + g.dl_xprior
        # sym(A + v w^T) = sym(A) + (v w^T + w v^T) / 2
        aP_prior = symmetrize(multiply(multiply(IKH.T, aP), IKH) + outer(v, w))
        if g.dl_Pprior is not None:
            aP_prior = aP_prior + g.dl_Pprior

        t = multiply(K.T, ax)
        dy[k] = t if g.dl_y is None else t + g.dl_y
        dQ[k] = aP_prior
        r = symmetrize(multiply(multiply(K.T, aP), K) - outer(t, s))
        dR[k] = r if g.dl_R is None else r + g.dl_R

        F_next = model.at("F", k)

    dx0 = multiply(F_next.T, ax_prior)
    dP0 = symmetrize(multiply(multiply(F_next.T, aP_prior), F_next))
    return GradientSet(loss=loss, dP0=dP0, dx0=dx0, dQ_steps=dQ, dR_steps=dR, dy=dy)


def sqrt_factor_grad(dM: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Gradient with respect to the lower factor ``L`` of ``M = L L^T``.

    ``dM`` is the symmetric-part gradient with respect to ``M``. Entries
    above the diagonal are not free parameters and are returned as zero.
    """
    if dM.shape != L.shape or dM.shape[0] != dM.shape[1]:
        raise DimensionError(f"shape mismatch: dM {dM.shape}, L {L.shape}")
    return np.tril(2.0 * multiply(dM, L))


GRADIENT_TAGS = (
    "P0", "x0", "Q_static", "R_static", "Q_step", "R_step", "y",
    "L_of_R", "L_of_Q", "L_of_P0",
)


def _static_param(model: FilterModel, name: str) -> np.ndarray:
    if not model.is_static(name):
        raise ValueError(f"{name} is time-varying; its factor gradient is per step")
    return getattr(model, name)


def grad_wrt(tape: FilterTape, spec, which: str, step: int | None = None,
             grads: GradientSet | None = None) -> np.ndarray:
    """Single gradient by tag, e.g. ``grad_wrt(tape, NllLoss(), "L_of_R")``.

    ``Q_step``, ``R_step`` and ``y`` need ``step``. A precomputed
    ``GradientSet`` may be passed to avoid repeating the backward sweep.
    """
    if which not in GRADIENT_TAGS:
        raise KeyError(f"unknown gradient tag {which!r}; expected one of {GRADIENT_TAGS}")
    if which in ("Q_step", "R_step", "y") and step is None:
        raise ValueError(f"{which} requires a step index")
    g = backward(tape, spec) if grads is None else grads
    model = tape.model
    if which == "P0":
        return g.dP0
    if which == "x0":
        return g.dx0
    if which == "Q_static":
        return g.dQ_static
    if which == "R_static":
        return g.dR_static
    if which == "Q_step":
        return g.dQ_steps[step]
    if which == "R_step":
        return g.dR_steps[step]
    if which == "y":
        return g.dy[step]
    if which == "L_of_R":
        return sqrt_factor_grad(g.dR_static, cholesky(_static_param(model, "R")).lower)
    if which == "L_of_Q":
        return sqrt_factor_grad(g.dQ_static, cholesky(_static_param(model, "Q")).lower)
    return sqrt_factor_grad(g.dP0, cholesky(model.P0).lower)
