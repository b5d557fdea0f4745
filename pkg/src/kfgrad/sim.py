"""Synthetic constant-velocity trajectories with known noisy accelerations.

The state is ``(p, v)`` in ``dim`` spatial dimensions (3 by default).
Row ``k`` of the output (0-based) is produced from row ``k - 1`` (or the
initial state) by::

    p[k] = p[k-1] + dt v[k-1] + w[k]^p
    v[k] = v[k-1] + dt a[k] + w[k]^v
    y[k] = p[k] + nu[k]

so ``Trajectory.inputs[k] = a[k]`` is the acceleration applied in the
prediction into step ``k`` and can be passed directly as the filter's
``u``. Noise is drawn from ``numpy.random.Philox`` seeded with
``SimConfig.seed``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .filter import FilterModel

__all__ = [
    "RNG_NAME",
    "SimConfig",
    "Trajectory",
    "default_R_true",
    "constant_velocity_matrices",
    "simulate",
    "model_from_sim",
    "write_trajectory",
    "read_trajectory",
]

RNG_NAME = "numpy.random.Philox"


def default_R_true(dim: int = 3, seed: int = 7) -> np.ndarray:
    """Correlated measurement covariance, eigenvalues roughly in [40, 100].

    Variances this large relative to ``N * alpha`` keep plain gradient
    descent on the factor stable at the default step size.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    L = np.tril(rng.normal(size=(dim, dim)), -1) * 2.0
    L[np.diag_indices(dim)] = rng.uniform(6.5, 9.0, size=dim)
    return L @ L.T


def _default_Q(dim: int = 3) -> np.ndarray:
    return np.diag([0.01] * dim + [0.04] * dim)


@dataclass
class SimConfig:
    """Settings of a simulated run.

    ``input_profile`` is ``"sinusoidal"``, ``"constant"`` or an explicit
    ``(N, dim)`` array of accelerations.
    """

    N: int = 1440
    dt: float = 1.0
    dim: int = 3
    Q_true: np.ndarray | None = None
    R_true: np.ndarray | None = None
    x0_true: np.ndarray | None = None
    P0: np.ndarray | None = None
    input_profile: object = "sinusoidal"
    accel_amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self):
        d = 2 * self.dim
        if self.Q_true is None:
            self.Q_true = _default_Q(self.dim)
        if self.R_true is None:
            self.R_true = default_R_true(self.dim)
        if self.x0_true is None:
            self.x0_true = np.zeros(d)
        if self.P0 is None:
            self.P0 = np.eye(d)
        self.Q_true = np.asarray(self.Q_true, dtype=np.float64)
        self.R_true = np.asarray(self.R_true, dtype=np.float64)
        self.x0_true = np.asarray(self.x0_true, dtype=np.float64)
        self.P0 = np.asarray(self.P0, dtype=np.float64)
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.Q_true.shape != (d, d) or self.R_true.shape != (self.dim, self.dim):
            raise ValueError("Q_true/R_true dimensions do not match dim")
        for name in ("Q_true", "R_true"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.Q_true).min() < 0:
            raise ValueError("Q_true must be positive semi-definite")
        if np.linalg.eigvalsh(self.R_true).min() <= 0:
            raise ValueError("R_true must be positive definite")
        self.accelerations()  # validates input_profile

    def accelerations(self) -> np.ndarray:
        t = np.arange(self.N) * self.dt
        if isinstance(self.input_profile, str):
            if self.input_profile == "constant":
                return np.full((self.N, self.dim), self.accel_amplitude)
            if self.input_profile == "sinusoidal":
                periods = 100.0 + 37.0 * np.arange(self.dim)
                phases = np.arange(self.dim) * 0.9
                return self.accel_amplitude * np.sin(
                    2 * np.pi * t[:, None] / periods + phases
                )
            raise ValueError(f"unknown input profile {self.input_profile!r}")
        a = np.asarray(self.input_profile, dtype=np.float64)
        if a.shape != (self.N, self.dim):
            raise ValueError(f"supplied accelerations must have shape {(self.N, self.dim)}")
        return a

    def metadata(self) -> dict:
        meta = asdict(self)
        for key, value in meta.items():
            if isinstance(value, np.ndarray):
                meta[key] = value.tolist()
        meta["rng"] = RNG_NAME
        return meta


@dataclass
class Trajectory:
    true_states: np.ndarray
    inputs: np.ndarray
    measurements: np.ndarray
    config: SimConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        if not len(self.true_states) == len(self.inputs) == len(self.measurements):
            raise ValueError("trajectory arrays must have equal length")


def _noise_root(C: np.ndarray) -> np.ndarray:
    """A matrix A with A A^T = C, tolerating singular C."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        return V * np.sqrt(np.clip(w, 0.0, None))


def constant_velocity_matrices(dim: int = 3, dt: float = 1.0):
    """``(F, B, H)`` of the constant-velocity model with acceleration input."""
    I, Z = np.eye(dim), np.zeros((dim, dim))
    F = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([Z, dt * I])
    H = np.hstack([I, Z])
    return F, B, H


def simulate(cfg: SimConfig) -> Trajectory:
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    F, B, H = constant_velocity_matrices(cfg.dim, cfg.dt)
    d = 2 * cfg.dim
    a = cfg.accelerations()
    w = rng.standard_normal((cfg.N, d)) @ _noise_root(cfg.Q_true).T
    nu = rng.standard_normal((cfg.N, cfg.dim)) @ _noise_root(cfg.R_true).T

    states = np.empty((cfg.N, d))
    x = cfg.x0_true
    for k in range(cfg.N):
        x = F @ x + B @ a[k] + w[k]
        states[k] = x
    ys = states @ H.T + nu
    return Trajectory(states, a, ys, cfg)


def model_from_sim(cfg: SimConfig, R_guess, inputs=None) -> FilterModel:
    """Filter model of the simulated system with ``R`` replaced by ``R_guess``.

    ``Q`` is the true process covariance; the filter starts from
    ``(x0_true, P0)``.
    """
    F, B, H = constant_velocity_matrices(cfg.dim, cfg.dt)
    u = cfg.accelerations() if inputs is None else inputs
    return FilterModel(F=F, H=H, Q=cfg.Q_true, R=np.asarray(R_guess, dtype=np.float64),
                       P0=cfg.P0, x0=cfg.x0_true, B=B, u=u)


def write_trajectory(traj: Trajectory, prefix, include_truth: bool = True):
    """Write ``<prefix>.csv`` and ``<prefix>.json`` (config metadata)."""
    prefix = Path(prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    m = traj.measurements.shape[1]
    p = traj.inputs.shape[1]
    header = ["t"] + [f"y{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(p)]
    if include_truth:
        header += [f"x{i + 1}" for i in range(traj.true_states.shape[1])]
    dt = traj.config.dt if traj.config is not None else 1.0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(traj.measurements)):
            row = [(k + 1) * dt, *traj.measurements[k], *traj.inputs[k]]
            if include_truth:
                row += list(traj.true_states[k])
            writer.writerow([repr(float(v)) for v in row])
    if traj.config is not None:
        with open(json_path, "w") as fh:
            json.dump(traj.config.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return csv_path, json_path


def read_trajectory(path) -> dict:
    """Columns of a trajectory CSV as arrays: ``t``, ``y``, ``u``, ``x``.

    Missing column groups come back as ``None``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))

    def group(prefix):
        cols = [i for i, h in enumerate(header) if h.startswith(prefix) and h[1:].isdigit()]
        cols.sort(key=lambda i: int(header[i][1:]))
        return data[:, cols] if cols else None

    t = data[:, header.index("t")] if "t" in header else None
    return {"t": t, "y": group("y"), "u": group("u"), "x": group("x")}
