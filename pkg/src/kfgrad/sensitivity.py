"""Forward-mode sensitivity equations.

The filter recursion is differentiated term by term with respect to one
scalar coordinate ``alpha`` of one parameter, and the loss derivative is
accumulated through the loss's local gradients. A full matrix gradient
needs one forward sweep per free entry, which is the classical
``O(N d^5)`` route the backward pass replaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filter import FilterModel, run_filter
from .linalg import DimensionError, multiply, solve_spd, symmetrize

__all__ = [
    "ParamSelector",
    "SensState",
    "sensitivity_steps",
    "forward_sensitivity",
    "full_gradient_forward",
    "assemble_symmetric",
]

TARGETS = ("P0", "Q", "R", "x0", "y")


@dataclass(frozen=True)
class ParamSelector:
    """One scalar coordinate of one parameter.

    ``index`` is ``(i, j)`` for matrix targets and ``(i,)`` for vectors.
    ``step`` restricts ``Q``/``R`` to a single step (``None`` perturbs the
    matrix at every step, i.e. a static parameter) and is required for
    ``y``. With ``symmetric_pair`` the entries ``(i, j)`` and ``(j, i)``
    move together.
    """

    target: str
    index: tuple
    step: int | None = None
    symmetric_pair: bool = True

    def direction(self, model: FilterModel) -> np.ndarray:
        """Unit perturbation of the selected parameter."""
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if self.target in ("x0", "y"):
            n = model.d if self.target == "x0" else model.m
            if len(self.index) != 1 or not 0 <= self.index[0] < n:
                raise IndexError(f"index {self.index} out of range for {self.target}")
            if self.target == "y" and self.step is None:
                raise ValueError("y selector needs a step")
            e = np.zeros(n)
            e[self.index[0]] = 1.0
            return e
        n = model.m if self.target == "R" else model.d
        if len(self.index) != 2 or not all(0 <= i < n for i in self.index):
            raise IndexError(f"index {self.index} out of range for {self.target}")
        if self.target == "P0" and self.step is not None:
            raise ValueError("P0 has no step")
        i, j = self.index
        E = np.zeros((n, n))
        E[i, j] = 1.0
        if self.symmetric_pair:
            E[j, i] = 1.0
        return E


@dataclass
class SensState:
    """Derivatives of the filter quantities at the current step."""

    dx_prior: np.ndarray
    dx_post: np.ndarray
    dP_prior: np.ndarray
    dP_post: np.ndarray
    dz: np.ndarray
    dS: np.ndarray
    dK: np.ndarray


def _pair(a, b):
    return float(np.vdot(a, b))


def sensitivity_steps(model: FilterModel, ys, spec, sel: ParamSelector):
    """Yield ``(SensState, dloss)`` for every step, ``dloss`` being the step's
    contribution to the loss derivative."""
    E = sel.direction(model)
    ys = np.asarray(ys, dtype=np.float64)
    N = ys.shape[0]
    if sel.step is not None and not 0 <= sel.step < N:
        raise IndexError(f"step {sel.step} out of range for {N} measurements")
    tape = run_filter(model, ys)
    d, m = model.d, model.m

    dx_post = E if sel.target == "x0" else np.zeros(d)
    dP_post = E if sel.target == "P0" else np.zeros((d, d))
    zero_mm = np.zeros((m, m))
    zero_m = np.zeros(m)

    for k, rec in enumerate(tape):
        F = model.at("F", k)
        H = rec.H
        here = sel.step is None or sel.step == k
        dQ = E if sel.target == "Q" and here else None
        dR = E if sel.target == "R" and here else zero_mm
        dy = E if sel.target == "y" and here else zero_m

        dx_prior = multiply(F, dx_post)
        dP_prior = multiply(multiply(F, dP_post), F.T)
        if dQ is not None:
            dP_prior = dP_prior + dQ
        dP_prior = symmetrize(dP_prior)

        dz = dy - multiply(H, dx_prior)
        dS = multiply(multiply(H, dP_prior), H.T) + dR
        # K = P H^T S^{-1}  =>  dK = (dP H^T - K dS) S^{-1}
        dK = solve_spd(rec.S_factor, (multiply(dP_prior, H.T) - multiply(rec.K, dS)).T).T
        dx_post = dx_prior + multiply(dK, rec.z) + multiply(rec.K, dz)
        # P+ = (I - K H) P
        dP_post = symmetrize(
            multiply(rec.IKH, dP_prior) - multiply(multiply(dK, H), rec.P_prior)
        )

        _, _, g = spec.step(rec, k)
        dl = 0.0
        if g.dl_xprior is not None:
            dl += _pair(g.dl_xprior, dx_prior)
        if g.dl_Pprior is not None:
            dl += _pair(g.dl_Pprior, dP_prior)
        if g.dl_R is not None and sel.target == "R" and here:
            dl += _pair(g.dl_R, dR)
        if g.dl_y is not None and sel.target == "y" and here:
            dl += _pair(g.dl_y, dy)
        if g.dl_xpost is not None:
            dl += _pair(g.dl_xpost, dx_post)
        if g.dl_Ppost is not None:
            dl += _pair(g.dl_Ppost, dP_post)
        yield SensState(dx_prior, dx_post, dP_prior, dP_post, dz, dS, dK), dl


def forward_sensitivity(model: FilterModel, ys, spec, sel: ParamSelector) -> float:
    """Derivative of the total loss with respect to the selected coordinate."""
    return sum(dl for _, dl in sensitivity_steps(model, ys, spec, sel))


def assemble_symmetric(n: int, value_of) -> np.ndarray:
    """Build a symmetric-part gradient from symmetric-pair derivatives.

    ``value_of(i, j)`` returns the derivative along ``E_ij + E_ji``, which
    equals ``2 G_ij`` off the diagonal and ``G_ii`` on it.
    """
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i + 1):
            v = value_of(i, j)
            if i != j:
                v *= 0.5
            G[i, j] = G[j, i] = v
    return G


def full_gradient_forward(model: FilterModel, ys, spec, target: str,
                          step: int | None = None) -> np.ndarray:
    """Whole gradient of one parameter, one forward sweep per entry.

    ``target`` is ``P0``, ``Q``, ``R`` (symmetric-part gradient), ``x0``
    (vector) or ``y`` (``(N, m)`` array of measurement gradients).
    """
    if target in ("P0", "Q", "R"):
        n = model.m if target == "R" else model.d
        return assemble_symmetric(
            n, lambda i, j: forward_sensitivity(
                model, ys, spec, ParamSelector(target, (i, j), step))
        )
    if target == "x0":
        return np.array([forward_sensitivity(model, ys, spec, ParamSelector("x0", (i,)))
                         for i in range(model.d)])
    if target == "y":
        N = np.shape(ys)[0]
        return np.array([[forward_sensitivity(model, ys, spec, ParamSelector("y", (i,), k))
                          for i in range(model.m)] for k in range(N)])
    raise DimensionError(f"unsupported target {target!r}")
