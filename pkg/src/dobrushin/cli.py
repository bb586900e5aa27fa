"""Command-line front end.

Every run first writes its resolved configuration (defaults included) to
standard error as one JSON line. Exit status is 0 on success, 1 on
precondition or certification errors and 2 on I/O or malformed input; in
the error cases a JSON object describing the error goes to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import ergodicity, harness, perturbation
from .errors import MalformedError, NumericalFailure, PreconditionError
from .operators import delta_coefficient, operator_from_json, power_and_cesaro
from .spaces import SpaceDescriptor, classical, pcone, quantum

log = logging.getLogger("dobrushin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by itself; route through our error path
    def error(self, message):
        raise UsageError(message)


def _load_json(path):
    if path == "-":
        return json.load(sys.stdin)
    with open(path) as fh:
        return json.load(fh)


def _load_operator(path, samples):
    try:
        obj = _load_json(path)
    except json.JSONDecodeError as exc:
        raise MalformedError(f"{path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedError(f"{path}: expected a JSON object")
    op = operator_from_json(obj, samples=samples)
    if not op.validated:
        kinds = sorted({v.kind for v in op.validation_report})
        raise PreconditionError(f"{path}: not a Markov operator ({', '.join(kinds)})")
    return op


def parse_space(text: str) -> SpaceDescriptor:
    """``classical:N``, ``pcone:D:P``, ``quantum:D`` or a JSON descriptor."""
    text = text.strip()
    if text.startswith("{"):
        return SpaceDescriptor.from_json(json.loads(text))
    parts = text.split(":")
    try:
        if parts[0] == "classical" and len(parts) == 2:
            return classical(int(parts[1]))
        if parts[0] == "pcone" and len(parts) == 3:
            return pcone(int(parts[1]), float(parts[2]))
        if parts[0] == "quantum" and len(parts) == 2:
            return quantum(int(parts[1]))
    except ValueError as exc:
        raise MalformedError(f"bad space {text!r}: {exc}") from exc
    raise MalformedError(f"bad space {text!r}; use classical:N, pcone:D:P or quantum:D")


def _attested(args):
    if args.delta_upper is not None and not args.attest:
        raise PreconditionError("--delta-upper requires --attest")
    return args.delta_upper if args.attest else None


def _emit(args, payload: str):
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _clean(obj):
    # JSON has no infinities; report them as null
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# -- subcommands ----------------------------------------------------------

def cmd_analyze(args):
    T = _load_operator(args.operator, args.samples)
    rep = ergodicity.classify(T, n_max=args.n_max, n_check=args.n_check,
                              threshold=args.threshold, tol=args.tol,
                              delta_upper=_attested(args), budget=args.budget,
                              seed=args.seed, traces=not args.no_traces)
    out = rep.to_json()
    if args.echo_operator:
        out["operator"] = T.to_json()
    _emit(args, _dump(_clean(out)))


def cmd_delta(args):
    T = _load_operator(args.operator, args.samples)
    A = T
    if args.power is not None or args.cesaro is not None:
        tn, an = power_and_cesaro(T, args.power if args.power is not None else args.cesaro)
        A = tn if args.power is not None else an
    est = delta_coefficient(A.matrix, T.space, budget=args.budget, seed=args.seed)
    out = est.to_json()
    out["value"] = min(max(out["value"], 0.0), 1.0)
    out["power"], out["cesaro"] = args.power, args.cesaro
    _emit(args, _dump(_clean(out)))


def cmd_bounds(args):
    T = _load_operator(args.T, args.samples)
    S = _load_operator(args.S, args.samples)
    rep = perturbation.tightness_report(T, S, m=args.m, horizon=args.horizon, tol=args.tol,
                                        delta_upper=args.delta_upper, attest=args.attest,
                                        n_max=args.n_max, budget=args.budget, seed=args.seed)
    if args.format == "csv":
        _emit(args, rep.per_n_csv())
    else:
        _emit(args, _dump(_clean(rep.to_json())))


def cmd_transfer(args):
    T = _load_operator(args.T, args.samples)
    S = _load_operator(args.S, args.samples)
    res = perturbation.stability_transfer(T, S, args.m, tol=args.tol,
                                          delta_upper=args.delta_upper, attest=args.attest,
                                          budget=args.budget, seed=args.seed)
    out = res.to_json()
    out["delta_upper_attested"] = args.delta_upper if args.attest else None
    _emit(args, _dump(_clean(out)))


def cmd_suite(args):
    cfg = harness.ExperimentConfig(parse_space(args.space), trials=args.trials, seed=args.seed,
                                   n_max=args.n_max, horizon=args.horizon,
                                   delta_budget=args.budget, threads=args.threads)
    res = harness.run_property_suite(cfg, inject_fault=args.inject_fault, families=args.families)
    _emit(args, _dump(_clean(res.to_json())))


def _configs(obj, args):
    obj = dict(obj)
    spaces = obj.pop("space")
    extra = {k: obj.pop(k) for k in ("epsilons", "open_samples") if k in obj}
    if args.threads_given:
        obj["threads"] = args.threads
    obj.setdefault("threads", args.threads)
    # the merged table is written once, by the CLI
    path = obj.pop("output_path", None)
    if args.output is None:
        args.output = path
    spaces = spaces if isinstance(spaces, list) else [spaces]
    cfgs = [harness.ExperimentConfig.from_json({**obj, "space": sp}) for sp in spaces]
    return cfgs, extra


def cmd_experiment(args):
    try:
        obj = _load_json(args.config)
    except json.JSONDecodeError as exc:
        raise MalformedError(f"{args.config}: {exc}") from exc
    try:
        cfgs, extra = _configs(obj, args)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PreconditionError):
            raise
        raise MalformedError(f"bad experiment config: {exc}") from exc
    log.info(json.dumps({"experiment_configs": [c.to_json() for c in cfgs], **extra}))
    tables = []
    for cfg in cfgs:
        if args.kind == "tightness":
            tables.append(harness.tightness_experiment(cfg))
        else:
            tables.append(harness.density_experiment(
                cfg, extra.get("epsilons", (0.1, 0.5, 1.0, 1.9)), extra.get("open_samples", 100)))
    header = tables[0].header
    rows = [r for t in tables for r in t.rows]
    merged = harness.ExperimentTable(header, rows, {"runs": [t.summary for t in tables]})
    if args.output:
        merged.write(args.output)
        sys.stdout.write(_dump(_clean(merged.summary)))
    elif args.format == "csv":
        sys.stdout.write(merged.to_csv())
    else:
        sys.stdout.write(_dump(_clean({"summary": merged.summary, "rows": rows})))


# -- parser ---------------------------------------------------------------

def _common(p, delta_upper=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=16,
                   help="random starts for sampled suprema off the classical space")
    p.add_argument("--samples", type=int, default=64,
                   help="sampled extreme points for Markov validation")
    p.add_argument("--output", "-o", default=None, help="write the artifact here instead of stdout")
    if delta_upper:
        p.add_argument("--delta-upper", type=float, default=None,
                       help="user upper bound on delta(T); requires --attest")
        p.add_argument("--attest", action="store_true",
                       help="accept --delta-upper as certified (echoed into reports)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dobrushin", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="thread cap (default: $DOBRUSHIN_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="classify an operator and build its envelope")
    p.add_argument("operator")
    p.add_argument("--n-max", type=int, default=ergodicity.DEFAULT_N_MAX)
    p.add_argument("--n-check", type=int, default=ergodicity.DEFAULT_N_CHECK)
    p.add_argument("--threshold", type=float, default=ergodicity.DEFAULT_THRESHOLD)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--no-traces", action="store_true")
    p.add_argument("--echo-operator", action="store_true",
                   help="include the parsed operator in the report")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("delta", help="Dobrushin coefficient of T, T^k or A_n(T)")
    p.add_argument("operator")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--power", type=int, default=None)
    g.add_argument("--cesaro", type=int, default=None)
    _common(p, delta_upper=False)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("bounds", help="perturbation bounds for a pair (T, S)")
    p.add_argument("T")
    p.add_argument("S")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--horizon", type=int, default=64)
    p.add_argument("--n-max", type=int, default=ergodicity.DEFAULT_N_MAX)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("transfer", help="stability transfer from T to S")
    p.add_argument("T")
    p.add_argument("S")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-12)
    _common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("suite", help="randomized invariant suite")
    p.add_argument("--space", required=True, help="classical:N, pcone:D:P or quantum:D")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n-max", type=int, default=512)
    p.add_argument("--horizon", type=int, default=64)
    p.add_argument("--families", nargs="+", choices=tuple(harness.FAMILIES), default=None)
    p.add_argument("--inject-fault", action="store_true")
    _common(p, delta_upper=False)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("experiment", help="tightness or density experiment from a JSON config")
    p.add_argument("kind", choices=("tightness", "density"))
    p.add_argument("--config", required=True)
    p.add_argument("--output", "-o", default=None, help="CSV path; summary goes to stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_experiment)
    return parser


def _error(kind, message, status):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_status": status}) + "\n")
    return status


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(message)s", level=logging.INFO, force=True)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    args.threads_given = args.threads is not None
    if args.threads is None:
        args.threads = harness.default_threads()
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads_given")}
    log.info(json.dumps({"resolved_config": resolved}, sort_keys=True))
    try:
        args.func(args)
    except (MalformedError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except (PreconditionError, NumericalFailure) as exc:
        return _error(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
