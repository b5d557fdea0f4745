import numpy as np
import pytest

from kfgrad.filter import FilterModel


def random_spd(rng, n, lo=0.5, hi=2.0):
    Qm, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (Qm * rng.uniform(lo, hi, size=n)) @ Qm.T


def random_model(rng, d, m, N, time_varying=False, with_input=False):
    """Well-conditioned random system with spectral radius of F below 1.05."""

    def F_mat():
        A = rng.normal(size=(d, d))
        return A * (rng.uniform(0.6, 1.05) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9))

    if time_varying:
        F = np.array([F_mat() for _ in range(N)])
        H = rng.normal(size=(N, m, d))
        Q = np.array([random_spd(rng, d, 0.1, 1.0) for _ in range(N)])
        R = np.array([random_spd(rng, m) for _ in range(N)])
    else:
        F, H = F_mat(), rng.normal(size=(m, d))
        Q, R = random_spd(rng, d, 0.1, 1.0), random_spd(rng, m)
    kwargs = {}
    if with_input:
        kwargs = dict(B=rng.normal(size=(d, 2)), u=rng.normal(size=(N, 2)))
    return FilterModel(F=F, H=H, Q=Q, R=R, P0=random_spd(rng, d), x0=rng.normal(size=d), **kwargs)


def random_problem(rng, d, m, N, **kw):
    model = random_model(rng, d, m, N, **kw)
    ys = rng.normal(size=(N, m)) * 1.5
    return model, ys


def scalar_model(**over):
    """The one-step scalar system F = H = 1, Q = 0, P0 = 1, R = 1, x0 = 0."""
    kw = dict(F=[[1.0]], H=[[1.0]], Q=[[0.0]], R=[[1.0]], P0=[[1.0]], x0=[0.0])
    kw.update(over)
    return FilterModel(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
