import csv
import json

import numpy as np
import pytest

from kfgrad.filter import FilterModel
from kfgrad.linalg import cholesky
from kfgrad.loss import NllLoss, ZeroLoss
from kfgrad.optim import FitConfig, FitError, fit
from kfgrad.sim import SimConfig, model_from_sim, simulate

from conftest import random_problem, scalar_model


def scalar_noise_problem(R_true=2.0, N=500, seed=0):
    ys = np.random.default_rng(seed).normal(scale=np.sqrt(R_true), size=(N, 1))
    # constant state pinned at zero: the measurements are pure noise
    model = FilterModel(F=[[1.0]], H=[[1.0]], Q=[[0.0]], R=[[1.0]], P0=[[1e-9]], x0=[0.0])
    return model, ys


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(targets=()), dict(targets=("F",)), dict(alpha=-1.0),
                                     dict(max_iters=-1), dict(gradient="adam")])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            FitConfig(**bad)

    def test_bad_initial_factor(self, rng):
        model, ys = random_problem(rng, 2, 2, 5)
        with pytest.raises(FitError):
            fit(model, ys, NllLoss(), FitConfig(init_factors={"R": -np.eye(2)}))

    def test_time_varying_target(self, rng):
        model, ys = random_problem(rng, 2, 1, 5, time_varying=True)
        with pytest.raises(FitError):
            fit(model, ys, NllLoss(), FitConfig(max_iters=1))


class TestFit:
    def test_zero_gradient_leaves_parameters(self, rng):
        model, ys = random_problem(rng, 3, 2, 10)
        report = fit(model, ys, ZeroLoss(), FitConfig(targets=("R", "Q", "P0"), max_iters=5))
        assert report.loss_history == [0.0] * 6
        for t in ("R", "Q", "P0"):
            np.testing.assert_array_equal(report.covariances[t], report.factors[t] @ report.factors[t].T)
            np.testing.assert_allclose(report.covariances[t], getattr(model, t), rtol=1e-14)

    def test_zero_step_size(self, rng):
        model, ys = random_problem(rng, 3, 2, 10)
        report = fit(model, ys, NllLoss(), FitConfig(alpha=0.0, max_iters=3))
        np.testing.assert_array_equal(report.factors["R"], report.init_factors["R"])
        assert len(set(report.loss_history)) == 1

    def test_no_iterations(self, rng):
        model, ys = random_problem(rng, 3, 2, 10)
        report = fit(model, ys, NllLoss(), FitConfig(max_iters=0))
        assert report.iterations == 0 and len(report.loss_history) == 1

    def test_history_lengths(self, rng):
        model, ys = random_problem(rng, 3, 2, 10)
        report = fit(model, ys, NllLoss(), FitConfig(alpha=1e-3, max_iters=4))
        assert report.iterations == 4
        assert len(report.loss_history) == len(report.grad_norm_history) == \
            len(report.wall_ms_history) == 5
        assert report.final_loss == report.loss_history[-1]

    def test_scalar_noise_variance_recovery(self):
        model, ys = scalar_noise_problem()
        report = fit(model, ys, NllLoss(), FitConfig(alpha=5e-4, max_iters=100))
        R_hat = report.covariances["R"][0, 0]
        assert R_hat == pytest.approx(2.0, rel=0.2)
        # maximum-likelihood variance of zero-mean samples
        assert R_hat == pytest.approx(float(np.mean(ys ** 2)), rel=1e-3)

    def test_backward_and_forward_steps_agree(self, rng):
        model, ys = random_problem(rng, 3, 2, 20)
        out = {}
        for source in ("backward", "sensitivity"):
            cfg = FitConfig(targets=("R", "Q"), alpha=1e-3, max_iters=1, gradient=source)
            out[source] = fit(model, ys, NllLoss(), cfg)
        for t in ("R", "Q"):
            np.testing.assert_allclose(out["backward"].factors[t], out["sensitivity"].factors[t],
                                       rtol=0, atol=1e-8)

    def test_halving_keeps_diagonal_positive(self):
        # zero innovations make dR = sum S^{-1} > 0, so a large step overshoots
        model = scalar_model()
        report = fit(model, np.zeros((5, 1)), NllLoss(), FitConfig(alpha=10.0, max_iters=3))
        assert report.halvings > 0
        assert report.factors["R"][0, 0] > 0

    def test_halving_gives_up(self):
        model = scalar_model()
        with pytest.raises(FitError):
            fit(model, np.zeros((5, 1)), NllLoss(), FitConfig(alpha=1e12, max_iters=1))

    def test_stop_tolerance(self):
        model, ys = scalar_noise_problem()
        report = fit(model, ys, NllLoss(), FitConfig(alpha=5e-4, max_iters=1000, stop_tol=1e-9))
        assert report.iterations < 1000

    def test_simulated_descent(self):
        cfg = SimConfig(N=300, seed=1)
        ys = simulate(cfg).measurements
        scale = 4 * np.trace(cfg.R_true) / 3
        init = {"R": cholesky(scale * np.eye(3)).lower}
        report = fit(model_from_sim(cfg, scale * np.eye(3)), ys, NllLoss(),
                     FitConfig(alpha=0.005, max_iters=15, init_factors=init))
        assert np.all(np.diff(report.loss_history) <= 0)


class TestReport:
    def test_write(self, rng, tmp_path):
        model, ys = random_problem(rng, 2, 2, 5)
        report = fit(model, ys, NllLoss(), FitConfig(alpha=1e-3, max_iters=2))
        json_path, csv_path = report.write(tmp_path / "fit")
        doc = json.loads(json_path.read_text())
        assert doc["iterations"] == 2
        np.testing.assert_allclose(doc["covariances"]["R"], report.covariances["R"])
        rows = list(csv.reader(csv_path.open()))
        assert rows[0] == ["iteration", "loss", "grad_norm", "wall_ms"]
        assert len(rows) == 4
        assert float(rows[-1][1]) == report.final_loss
