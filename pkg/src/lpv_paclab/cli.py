"""Command line interface: ``lpv-paclab <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed assertion (coverage or bound checks).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import BudgetError, ConfigError, NumericalError
from .experiment import ExperimentConfig, run_experiment, validate_pac_montecarlo, write_artifacts
from .ident import identify
from .lpv_core import THETA_STAR, LpvSystem, ThetaFamily, simulate, simulate_batch, theta_system
from .pac import PacConfig, theorem1_bound
from .signals import DistributionSpec, PiecewiseConstantSignal, generate_dataset, load_dataset, paper_law, save_dataset
from .stability_h2 import certify, check_family, lyapunov_residual, solve_gen_lyapunov
from .volterra import picard_output, truncated_output

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERT = 0, 2, 3, 4


class AssertionFailed(Exception):
    pass


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _system(args) -> LpvSystem:
    if getattr(args, "system", None):
        return LpvSystem.from_dict(_read_json(args.system))
    return theta_system(args.theta)


def _add_system_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--system", help="JSON file with A, B, C matrix lists")
    g.add_argument("--theta", nargs=3, type=float, default=list(THETA_STAR), metavar=("T1", "T2", "T3"),
                   help="parameter of the two-state family (default: the reference parameter)")


def cmd_experiment(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    result = run_experiment(cfg)
    paths = write_artifacts(result, args.out)
    _emit({"artifacts": {k: str(v) for k, v in paths.items()},
           "bound_below_first_validation": result.report.get("bound_below_first_validation")})


def cmd_validate_bound(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    report = validate_pac_montecarlo(cfg, args.trials, args.N, bound_scale=args.bound_scale)
    _emit(report.to_dict(), args.out)
    if not report.passed:
        raise AssertionFailed(f"failure fraction {report.failure_fraction:.3g} exceeds delta={report.delta}")


def cmd_gen_data(args):
    law = DistributionSpec.from_dict(_read_json(args.law)) if args.law else paper_law(args.noise_variance)
    system = _system(args)
    ds = generate_dataset(args.n, law, args.T, args.ts, system, args.seed, method=args.method,
                          system_id=args.system or f"theta={list(args.theta)}")
    save_dataset(ds, args.out)
    _emit({"n": len(ds), "out": args.out})


def cmd_simulate(args):
    system = _system(args)
    ds = load_dataset(args.data)
    Y, _ = simulate_batch(system, ds.U, ds.P, ds.ts, args.method, args.step)
    _emit({"method": args.method, "step": args.step or ds.ts, "y_T": Y[:, -1].tolist()}, args.out)


def cmd_h2norm(args):
    system = _system(args)
    Q = solve_gen_lyapunov(system, args.lam)
    h2_sq = float(sum(np.trace(b.T @ Q @ b) for b in system.B))
    _emit({"lambda": args.lam, "h2_sq": h2_sq, "h2": h2_sq**0.5, "Q": Q.tolist(),
           "residual": lyapunov_residual(system, args.lam, Q)}, args.out)


def cmd_check_stability(args):
    if args.system:
        system = _system(args)
        cert = certify(system, args.lam, args.slack)
        _emit(cert.to_dict(), args.out)
        if not cert.valid:
            raise AssertionFailed("certificate is not valid")
        return
    report = check_family(ThetaFamily(args.lam, args.c_E), args.theta)
    _emit(report.to_dict(), args.out)


def cmd_pac_bound(args):
    cfg = PacConfig.from_dict(_read_json(args.config))
    _emit(theorem1_bound(cfg, args.eps).to_dict(), args.out)


def cmd_identify(args):
    ds = load_dataset(args.data)
    est = identify(ds, args.ts, args.lam, args.c_E, k_eval=args.k, all_k=args.all_k,
                   strict_paper=args.strict_paper)
    _emit(est.to_dict(), args.out)


def cmd_volterra_check(args):
    system = _system(args)
    rng = np.random.default_rng(args.seed)
    K = round(args.T / args.ts)
    u = PiecewiseConstantSignal(args.ts, rng.uniform(-1, 1, (K, system.n_in)))
    p = PiecewiseConstantSignal(args.ts, rng.uniform(-1, 1, (K, system.n_p)))
    y_trunc = truncated_output(system, u, p, args.lam, args.T, args.K_max, args.h)
    y_picard = picard_output(system, u, p, args.K_max, args.step)
    y_rk4 = simulate(system, u, p, "rk4", args.step).y_T
    rel = float(np.linalg.norm(y_trunc - y_rk4) / max(np.linalg.norm(y_rk4), 1e-300))
    _emit({"K_max": args.K_max, "h": args.h, "y_trunc": y_trunc.tolist(), "y_picard": y_picard.tolist(),
           "y_rk4": y_rk4.tolist(), "rel_err": rel}, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpv-paclab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="run the identification experiment and write artifacts")
    p.add_argument("--config", help="experiment configuration JSON (defaults to the reference setup)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("validate-bound", help="Monte Carlo coverage check of the PAC bound")
    p.add_argument("--config")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--bound-scale", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate_bound)

    p = sub.add_parser("gen-data", help="generate and save a dataset")
    _add_system_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--T", type=float, default=0.45)
    p.add_argument("--ts", type=float, default=0.01)
    p.add_argument("--law", help="distribution spec JSON (defaults to the reference law)")
    p.add_argument("--noise-variance", type=float, default=0.05)
    p.add_argument("--method", choices=("euler", "rk4"), default="euler")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("simulate", help="simulate a system on the signals of a dataset")
    _add_system_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("euler", "rk4"), default="rk4")
    p.add_argument("--step", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("h2norm", help="lambda-weighted H2 norm via the generalized Lyapunov equation")
    _add_system_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=1.2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_h2norm)

    p = sub.add_parser("check-stability", help="stability certificate (--system) or family membership (--theta)")
    _add_system_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=1.2)
    p.add_argument("--c-E", dest="c_E", type=float, default=2.0)
    p.add_argument("--slack", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_stability)

    p = sub.add_parser("pac-bound", help="evaluate the uniform PAC bound")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", type=float, nargs="+", default=[0.5, 0.1, 0.05, 0.01])
    p.add_argument("--out")
    p.set_defaults(func=cmd_pac_bound)

    p = sub.add_parser("identify", help="least-squares identification from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ts", type=float)
    p.add_argument("--k", type=int, help="regressor sample index (default: last sample)")
    p.add_argument("--all-k", action="store_true", help="pool every sample k >= 2")
    p.add_argument("--strict-paper", action="store_true", help="use +alpha^2 for the y_(k-2) coefficient")
    p.add_argument("--lambda", dest="lam", type=float, default=1.2)
    p.add_argument("--c-E", dest="c_E", type=float, default=2.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("volterra-check", help="compare the truncated series with simulation")
    _add_system_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=float, default=0.45)
    p.add_argument("--ts", type=float, default=0.01)
    p.add_argument("--K-max", dest="K_max", type=int, default=3)
    p.add_argument("--h", type=float, default=0.015)
    p.add_argument("--lambda", dest="lam", type=float, default=1.2)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_volterra_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AssertionFailed as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, BudgetError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
