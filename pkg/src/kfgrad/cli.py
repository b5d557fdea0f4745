"""Command-line interface: ``kfgrad {simulate,grad,check,fit,bench}``.

Exit codes: 0 success, 1 tolerance failure, 2 usage error, 3 numerical
failure (a covariance lost positive definiteness), 4 I/O failure.
The default seed is read from the ``KFGRAD_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .backprop import backward, sqrt_factor_grad
from .bench import METHODS, run_bench, write_bench
from .fdcheck import FdError, fd_full, relative_discrepancy
from .filter import run_filter
from .io import load_problem
from .linalg import NotPositiveDefinite, cholesky
from .loss import MseLoss, NllLoss
from .optim import FitConfig, FitError, fit
from .sensitivity import full_gradient_forward
from .sim import SimConfig, simulate, write_trajectory

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
SEED_ENV = "KFGRAD_SEED"
GRAD_TARGETS = ("P0", "Q", "R", "x0", "y")


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _csv_list(text, cast=str):
    try:
        return [cast(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _write_json(path, doc):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def _loss_for(name, problem):
    if name == "nll":
        return NllLoss()
    if problem.truth is None:
        raise UsageError("mse loss needs ground-truth columns x1..xd in the data file")
    return MseLoss(problem.truth)


def _gradients(method, model, ys, spec, targets):
    if method == "backward":
        g = backward(run_filter(model, ys), spec)
        full = {"P0": g.dP0, "Q": g.dQ_static, "R": g.dR_static, "x0": g.dx0, "y": g.dy}
        return g.loss, {t: full[t] for t in targets}, g
    fn = full_gradient_forward if method == "sensitivity" else fd_full
    loss = None
    return loss, {t: fn(model, ys, spec, t) for t in targets}, None


def cmd_simulate(args):
    cfg = SimConfig(N=args.n, dt=args.dt, seed=args.seed)
    traj = simulate(cfg)
    csv_path, json_path = write_trajectory(traj, args.out_prefix,
                                           include_truth=not args.no_truth)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_grad(args):
    problem = load_problem(args.model, args.data)
    spec = _loss_for(args.loss, problem)
    targets = GRAD_TARGETS if args.target == "all" else (args.target,)
    loss, grads, gset = _gradients(args.method, problem.model, problem.ys, spec, targets)
    key = {"P0": "dP0", "Q": "dQ", "R": "dR", "x0": "dx0", "y": "dy"}
    doc = {"method": args.method, "loss": args.loss}
    if loss is not None:
        doc["value"] = loss
    doc.update({key[t]: np.asarray(v).tolist() for t, v in grads.items()})
    if gset is not None and args.per_step:
        doc["dQ_steps"] = gset.dQ_steps.tolist()
        doc["dR_steps"] = gset.dR_steps.tolist()
    if gset is not None and args.factors:
        model = problem.model
        for name, dM in (("R", gset.dR_static), ("Q", gset.dQ_static), ("P0", gset.dP0)):
            if getattr(model, name).ndim == 2:
                doc[f"dL_{name}"] = sqrt_factor_grad(dM, cholesky(getattr(model, name)).lower).tolist()
    _write_json(args.out, doc)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args):
    problem = load_problem(args.model, args.data)
    spec = _loss_for(args.loss, problem)
    model, ys = problem.model, problem.ys
    targets = GRAD_TARGETS if args.target == "all" else (args.target,)
    _, back, _ = _gradients("backward", model, ys, spec, targets)
    if args.inject_error:
        first = targets[0]
        back[first] = np.array(back[first], dtype=np.float64)
        back[first].flat[0] += 1e-3 * max(1.0, abs(back[first].flat[0]))
    _, fwd, _ = _gradients("sensitivity", model, ys, spec, targets)
    _, fd, _ = _gradients("fd", model, ys, spec, targets)

    ok = True
    worst = None
    print(f"{'target':<6} {'vs fd':>12} {'vs sensitivity':>16}  values(backward)")
    for t in targets:
        e_fd, i_fd = relative_discrepancy(back[t], fd[t], args.tol_fd)
        e_fw, i_fw = relative_discrepancy(back[t], fwd[t], args.tol_fwd, atol=args.tol_fwd * 1e-4)
        flat = np.asarray(back[t]).ravel()
        shown = " ".join(f"{v:.6g}" for v in flat[:4]) + (" ..." if flat.size > 4 else "")
        print(f"{t:<6} {e_fd:12.3e} {e_fw:16.3e}  {shown}")
        for err, tol, idx, ref in ((e_fd, args.tol_fd, i_fd, "fd"),
                                   (e_fw, args.tol_fwd, i_fw, "sensitivity")):
            if err > tol:
                ok = False
                if worst is None or err / tol > worst[0]:
                    worst = (err / tol, t, idx, ref, err)
    if ok:
        print("check passed")
        return EXIT_OK
    _, t, idx, ref, err = worst
    print(f"check FAILED: worst coordinate {t}{list(idx)} vs {ref}, relative error {err:.3e}")
    return EXIT_CHECK


def cmd_fit(args):
    problem = load_problem(args.model, args.data)
    spec = _loss_for(args.loss, problem)
    try:
        cfg = FitConfig(targets=args.targets, alpha=args.alpha, max_iters=args.iters,
                        stop_tol=args.stop_tol)
    except ValueError as err:
        raise UsageError(str(err)) from None
    report = fit(problem.model, problem.ys, spec, cfg)
    json_path, csv_path = report.write(args.out_prefix)
    print(f"{report.iterations} iterations, loss {report.loss_history[0]:.6g} -> "
          f"{report.final_loss:.6g}")
    print(f"wrote {json_path} and {csv_path}")
    return EXIT_OK


def cmd_bench(args):
    for d in args.dims:
        if d < 2 or d % 2:
            raise UsageError(f"--dims entries must be even and >= 2, got {d}")
    for m in args.methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {METHODS}")
    if args.reps < 5:
        raise UsageError("--reps must be at least 5")

    def show(row):
        print(f"{row.method:<12} d={row.d:<3} m={row.m:<3} N={row.N:<6} "
              f"median {row.median_ms:10.2f} ms  multiplies {row.multiplies}", flush=True)

    rows = run_bench(args.dims, args.n, args.reps, args.methods, args.target, args.seed,
                     progress=show)
    meta = {"N": args.n, "reps": args.reps, "target": args.target, "seed": args.seed,
            "dims": args.dims, "methods": args.methods}
    csv_path, json_path = write_bench(rows, args.out_prefix, meta)
    for row in rows:
        if row.method != "backward" and row.ratio_to_backward is not None:
            print(f"{row.method}/backward at d={row.d}: {row.ratio_to_backward:.1f}x")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfgrad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the constant-velocity dataset")
    p.add_argument("--n", type=int, default=1440)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--no-truth", action="store_true", help="omit x1..x6 columns")
    p.set_defaults(func=cmd_simulate)

    def problem_args(p):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--data", default=None, help="measurement CSV (overrides the model's)")
        p.add_argument("--loss", choices=("nll", "mse"), default="nll")

    p = sub.add_parser("grad", help="compute loss gradients")
    problem_args(p)
    p.add_argument("--method", choices=("backward", "sensitivity", "fd"), default="backward")
    p.add_argument("--target", choices=GRAD_TARGETS + ("all",), default="all")
    p.add_argument("--per-step", action="store_true", help="include dQ/dR per step (backward)")
    p.add_argument("--factors", action="store_true",
                   help="include square-root factor gradients (backward)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grad)

    p = sub.add_parser("check", help="compare backward, sensitivity and finite differences")
    problem_args(p)
    p.add_argument("--target", choices=GRAD_TARGETS + ("all",), default="all")
    p.add_argument("--tol-fd", type=float, default=1e-5)
    p.add_argument("--tol-fwd", type=float, default=1e-8)
    p.add_argument("--inject-error", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("fit", help="maximum-likelihood fit by gradient descent")
    problem_args(p)
    p.add_argument("--targets", type=_csv_list, default=["R"])
    p.add_argument("--alpha", type=float, default=0.005)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--stop-tol", type=float, default=0.0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="time full-gradient computation per method")
    p.add_argument("--dims", type=lambda s: _csv_list(s, int), default=[2, 4, 6, 8])
    p.add_argument("--n", type=int, default=1440)
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--methods", type=_csv_list, default=["backward", "sensitivity"])
    p.add_argument("--target", choices=("R", "Q", "P0"), default="R")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args)
    except UsageError as err:
        print(f"kfgrad: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefinite, FitError, FdError) as err:
        print(f"kfgrad: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError, ValueError) as err:
        print(f"kfgrad: cannot use input: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
