"""Maximum-likelihood tuning of filter covariances by plain gradient descent.

Each covariance being fitted is parameterized by its lower Cholesky factor
``L`` (``M = L L^T``), updated as ``L <- L - alpha * dLoss/dL`` with a fixed
step. No line search or momentum.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backprop import backward, sqrt_factor_grad
from .filter import FilterModel, run_filter
from .linalg import NotPositiveDefinite, cholesky

__all__ = ["FitConfig", "FitReport", "FitError", "fit", "GRADIENT_SOURCES"]

FIT_TARGETS = ("R", "Q", "P0")
MAX_HALVINGS = 20


class FitError(RuntimeError):
    pass


@dataclass
class FitConfig:
    targets: tuple = ("R",)
    alpha: float = 0.005
    max_iters: int = 100
    init_factors: dict = field(default_factory=dict)
    stop_tol: float = 0.0
    gradient: str = "backward"

    def __post_init__(self):
        self.targets = tuple(self.targets)
        if not self.targets or any(t not in FIT_TARGETS for t in self.targets):
            raise ValueError(f"targets must be a non-empty subset of {FIT_TARGETS}")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.gradient not in GRADIENT_SOURCES:
            raise ValueError(f"gradient must be one of {tuple(GRADIENT_SOURCES)}")


@dataclass
class FitReport:
    loss_history: list
    grad_norm_history: list
    wall_ms_history: list
    factors: dict
    covariances: dict
    iterations: int
    wall_time: float
    final_loss: float
    halvings: int = 0
    init_factors: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            return v

        return {k: conv(v) for k, v in self.__dict__.items()}

    def write(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.json`` and ``<prefix>_history.csv``."""
        prefix = Path(prefix)
        json_path = prefix.with_suffix(".json")
        csv_path = prefix.parent / f"{prefix.name}_history.csv"
        with open(json_path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "loss", "grad_norm", "wall_ms"])
            for i, (loss, gn, ms) in enumerate(
                zip(self.loss_history, self.grad_norm_history, self.wall_ms_history)
            ):
                writer.writerow([i, repr(loss), repr(gn), repr(ms)])
        return json_path, csv_path


def _backward_grads(model, ys, spec):
    g = backward(run_filter(model, ys), spec)
    return g.loss, {"R": g.dR_static, "Q": g.dQ_static, "P0": g.dP0}


def _forward_grads(model, ys, spec):
    from .loss import total_loss

    loss = total_loss(run_filter(model, ys), spec)
    return loss, _LazyForward(model, ys, spec)


class _LazyForward(dict):
    """Forward-sensitivity gradients, computed per target on first access."""

    def __init__(self, model, ys, spec):
        super().__init__()
        self._args = (model, ys, spec)

    def __missing__(self, key):
        from .sensitivity import full_gradient_forward

        value = full_gradient_forward(*self._args, key)
        self[key] = value
        return value


GRADIENT_SOURCES = {"backward": _backward_grads, "sensitivity": _forward_grads}


def _step_factor(L, G, alpha):
    """One descent step on ``L``; diagonal entries that would turn
    non-positive have their step halved (up to MAX_HALVINGS times)."""
    new = L - alpha * G
    halvings = 0
    for i in range(L.shape[0]):
        step = alpha * G[i, i]
        tries = 0
        while L[i, i] - step <= 0:
            if tries == MAX_HALVINGS:
                raise FitError(f"diagonal entry {i} stays non-positive after {tries} halvings")
            step *= 0.5
            tries += 1
        new[i, i] = L[i, i] - step
        halvings += tries
    return new, halvings


def fit(model: FilterModel, ys, spec, cfg: FitConfig) -> FitReport:
    """Fit the covariances named in ``cfg.targets``.

    Iteration ``i`` records the loss at the current parameters, then steps.
    Stops after ``max_iters`` steps, or when the relative loss decrease
    falls below ``stop_tol``. The returned history has one entry per
    iteration plus the loss at the final parameters.
    """
    grad_fn = GRADIENT_SOURCES[cfg.gradient]
    factors = {}
    for t in cfg.targets:
        if t in cfg.init_factors:
            L = np.array(cfg.init_factors[t], dtype=np.float64)
            if not np.allclose(L, np.tril(L)) or np.any(np.diag(L) <= 0):
                raise FitError(f"initial factor for {t} must be lower triangular "
                               "with positive diagonal")
        else:
            if t != "P0" and not model.is_static(t):
                raise FitError(f"{t} is time-varying; only static covariances can be fitted")
            L = cholesky(getattr(model, t)).lower
        factors[t] = np.tril(L)
    init = {t: L.copy() for t, L in factors.items()}

    losses, gnorms, times = [], [], []
    halvings = 0
    t_start = time.perf_counter()
    it = 0
    while True:
        t0 = time.perf_counter()
        current = model.replace(**{t: L @ L.T for t, L in factors.items()})
        try:
            loss, grads = grad_fn(current, ys, spec)
        except NotPositiveDefinite as err:
            raise FitError(f"filter failed at iteration {it}: {err}") from err
        if not math.isfinite(loss):
            raise FitError(f"loss is not finite at iteration {it}")
        factor_grads = {t: sqrt_factor_grad(grads[t], L) for t, L in factors.items()}
        gnorm = math.sqrt(sum(float(np.sum(G * G)) for G in factor_grads.values()))
        losses.append(loss)
        gnorms.append(gnorm)

        done = it >= cfg.max_iters
        if not done and cfg.stop_tol > 0 and len(losses) > 1:
            prev = losses[-2]
            done = (prev - loss) <= cfg.stop_tol * abs(prev)
        if done:
            times.append((time.perf_counter() - t0) * 1e3)
            break
        for t, G in factor_grads.items():
            factors[t], h = _step_factor(factors[t], G, cfg.alpha)
            halvings += h
        times.append((time.perf_counter() - t0) * 1e3)
        it += 1

    return FitReport(
        loss_history=losses,
        grad_norm_history=gnorms,
        wall_ms_history=times,
        factors=factors,
        covariances={t: L @ L.T for t, L in factors.items()},
        iterations=it,
        wall_time=time.perf_counter() - t_start,
        final_loss=losses[-1],
        halvings=halvings,
        init_factors=init,
        config={"targets": list(cfg.targets), "alpha": cfg.alpha,
                "max_iters": cfg.max_iters, "stop_tol": cfg.stop_tol,
                "gradient": cfg.gradient},
    )
