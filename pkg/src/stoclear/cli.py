"""Command-line entry point ``stoclear``.

Exit codes: 0 ok, 1 property violation, 2 input error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .formats import loads_instance, parse_instance, resolve_instance
from .formulations import NotOptimalError
from .lp import LpError
from .model import InstanceError, validate_instance
from .ph import PhParams, PhSolveError
from .runner import ALL, EXTENSIVE, PH, ConfigError, ExperimentConfig, run_experiment, verify

OK, VIOLATION, INPUT_ERROR, SOLVER_FAILURE = 0, 1, 2, 3
SOLVER_ERRORS = (LpError, NotOptimalError, PhSolveError)


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stoclear",
                                     description="Stochastic market clearing and pricing checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve, settle and write artifacts")
    run.add_argument("--instance", required=True, help="instance file or embedded name")
    run.add_argument("--formulation", default=ALL,
                     help="canonical, mean_vector, state_vector, all, or clairvoyant:<scenario>")
    run.add_argument("--solver", default=EXTENSIVE, choices=(EXTENSIVE, PH))
    run.add_argument("--mechanism", default=ALL, choices=("rc", "rm", "rs", ALL))
    run.add_argument("--perturb", action="store_true", help="jitter costs before solving")
    run.add_argument("--seed", type=_u64, default=0, help="perturbation seed (u64)")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--relation-tol", type=float, default=1e-5)
    run.add_argument("--kkt-tol", type=float, default=1e-6)
    run.add_argument("--ph-penalty", type=float, default=PhParams.penalty)
    run.add_argument("--ph-max-iters", type=int, default=PhParams.max_iters)

    val = sub.add_parser("validate", help="check an instance file")
    val.add_argument("--instance", required=True)

    ver = sub.add_parser("verify", help="run every property check; exit 1 on a violation")
    ver.add_argument("--instance", required=True)
    ver.add_argument("--tol", type=float, default=1e-5)
    return parser


def _load(ref: str):
    path = Path(ref)
    return parse_instance(path) if path.exists() else resolve_instance(ref)


def cmd_run(args) -> int:
    config = ExperimentConfig(
        instance=args.instance, out_dir=args.out, formulation=args.formulation,
        solver=args.solver, mechanism=args.mechanism, perturb=args.perturb, seed=args.seed,
        relation_tol=args.relation_tol, kkt_tol=args.kkt_tol,
        ph=PhParams(penalty=args.ph_penalty, max_iters=args.ph_max_iters))
    art = run_experiment(config)
    for name, path in sorted(art.files.items()):
        print(f"wrote {path}")
    bad = art.violations
    for label, chk in bad:
        print(f"FAIL {label}: {chk.name} {chk.detail}".rstrip())
    print(f"{len(art.checks) - len(bad)}/{len(art.checks)} checks passed")
    return OK


def cmd_validate(args) -> int:
    path = Path(args.instance)
    inst = loads_instance(path.read_text(), path.parent, str(path))
    report = validate_instance(inst)
    print(report)
    return OK if report.ok else INPUT_ERROR


def cmd_verify(args) -> int:
    inst = _load(args.instance)
    checks = verify(inst, tol=args.tol)
    for label, chk in checks:
        status = "PASS" if chk.passed else "FAIL"
        print(f"{status} {label}: {chk.name} {chk.detail}".rstrip())
    failed = sum(not c.passed for _, c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return VIOLATION if failed else OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else INPUT_ERROR
    try:
        return COMMANDS[args.command](args)
    except (InstanceError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
