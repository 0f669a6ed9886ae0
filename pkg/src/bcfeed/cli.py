"""Command-line front end.

Subcommands: ``gbc`` (SNR sweeps), ``ebc`` (erasure-channel queries) and
``dof``.  Data goes to stdout, diagnostics to stderr.  Exit codes: 0 success,
2 validation error, 3 numerical failure.
"""

import argparse
import json
import os
import sys

import jsonschema

from . import __version__, ebc, kernels
from .channel import ErasurePmf, SymmetricDeltas, ValidationError, symmetric_pmf
from .gbc import dof_sym
from .montecarlo import DEFAULT_CHUNK, DEFAULT_SAMPLES, McPlan
from .optimizer import BetaGrid
from .sweep import FIG_AXIS, PRESETS, SweepSpec, parse_schemes, run_sweep, snr_axis

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_DELTAS = {
    "type": "object",
    "required": ["K", "deltas"],
    "properties": {
        "K": {"type": "integer", "minimum": 1, "maximum": 20},
        "deltas": {"type": "array", "items": _PROB},
        "alphabet_bits": {"type": "number", "exclusiveMinimum": 0},
    },
}
_RATES = {"type": "array", "items": {"type": "number", "minimum": 0}}
_PMF = {
    "type": "object",
    "required": ["K", "probs"],
    "properties": {
        "K": {"type": "integer", "minimum": 1, "maximum": 20},
        "probs": {"type": "object", "patternProperties": {"^[0-9]+$": _PROB},
                  "additionalProperties": False},
    },
}
_PARAMS = {
    "type": "object",
    "required": ["K", "alphas", "q2"],
    "properties": {
        "K": {"type": "integer", "minimum": 1, "maximum": 20},
        "alphas": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "q2": {"type": "array", "items": {
            "type": "object", "patternProperties": {"^[0-9]+$": _PROB},
            "additionalProperties": False}},
        "alphabet_bits": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMAS = {
    "capacity-sym": _DELTAS,
    "mu-solve": _DELTAS,
    "region-check": {
        **_DELTAS,
        "required": ["K", "deltas", "rates"],
        "properties": {**_DELTAS["properties"], "rates": _RATES,
                       "shortcut": {"type": "boolean"}},
    },
    "feasible": {
        "type": "object",
        "required": ["rates", "params"],
        "properties": {"rates": _RATES, "params": _PARAMS, "pmf": _PMF,
                       "deltas": _DELTAS},
        "oneOf": [{"required": ["pmf"]}, {"required": ["deltas"]}],
    },
}


def _validate(obj, query):
    try:
        jsonschema.validate(obj, SCHEMAS[query])
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"{exc.json_path}: {exc.message}") from None


def _at(path, build, *args):
    # semantic checks beyond the schema still name the offending field
    try:
        return build(*args)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _deltas(obj, path="$"):
    return _at(f"{path}.deltas", SymmetricDeltas, obj["K"], tuple(obj["deltas"]))


def run_ebc(query, obj):
    """Dispatch an EBC query on a parsed JSON object; returns a JSON-able dict."""
    _validate(obj, query)
    if query == "capacity-sym":
        d = _deltas(obj)
        bits = obj.get("alphabet_bits", 1.0)
        return {"K": d.K, "rate": ebc.sym_rate_ebc(d, bits), "alphabet_bits": bits}
    if query == "mu-solve":
        d = _deltas(obj)
        mu = ebc.mu_solver_symmetric(d)
        bits = obj.get("alphabet_bits", 1.0)
        return {"K": d.K, "mu": mu.to_json()["mu"],
                "rate": ebc.sym_rate_from_mu(mu, d, bits),
                "lemma2_violation": ebc.lemma2_check(mu, d)}
    if query == "region-check":
        d = _deltas(obj)
        res = ebc.sym_capacity_region_check(obj["rates"], d, obj.get("alphabet_bits", 1.0),
                                            shortcut=obj.get("shortcut", False))
        out = {"feasible": res.feasible, "excess": res.excess,
               "worst_permutation": list(res.permutation)}
        if not res.feasible:
            out["violated_permutation"] = list(res.permutation)
        return out
    # feasible
    params = _at("$.params", ebc.EbcSchemeParams.from_json, obj["params"])
    if "pmf" in obj:
        pmf = _at("$.pmf", ErasurePmf.from_json, obj["pmf"])
    else:
        pmf = _at("$.deltas", symmetric_pmf, _deltas(obj["deltas"], "$.deltas"))
    return _at("$.rates", ebc.jsc_ebc_feasible, obj["rates"], params, pmf).to_json()


def _read_json(args):
    if args.json is not None:
        text = args.json
    elif args.input == "-":
        text = sys.stdin.read()
    else:
        with open(args.input) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON input: {exc}") from None


def _seed(args):
    env = os.environ.get("BCFEED_SEED")
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"BCFEED_SEED must be an integer, got {env!r}") from None


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ValidationError("--threads must be >= 1")
    if kernels.BACKEND == "numba":
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def build_spec(args):
    preset = PRESETS[args.preset] if args.preset else None
    users, tx, rx, ref, schemes = preset or (None, None, 1, "per-antenna", None)
    users = args.users if args.users is not None else users
    if users is None:
        raise ValidationError("--users is required without --preset")
    tx = args.tx if args.tx is not None else (tx if tx is not None else users)
    rx = args.rx if args.rx is not None else rx
    ref = args.snr_ref or ref
    schemes = parse_schemes(args.schemes) if args.schemes else schemes
    if schemes is None:
        raise ValidationError("--schemes is required without --preset")
    if args.snr_db is not None:
        axis = [float(args.snr_db)]
    else:
        start, stop, step = FIG_AXIS if preset else (None, None, None)
        start = args.snr_start if args.snr_start is not None else start
        stop = args.snr_stop if args.snr_stop is not None else stop
        step = args.snr_step if args.snr_step is not None else (step or 1.0)
        if start is None or stop is None:
            raise ValidationError("give --snr-db or --snr-start/--snr-stop")
        axis = snr_axis(start, stop, step)
    if args.dump_grid and args.format != "json":
        raise ValidationError("--dump-grid requires --format json")
    plan = McPlan(args.samples, _seed(args), args.chunk)
    grid = BetaGrid(args.beta_min, args.beta_max, args.beta_points)
    return SweepSpec(users, tx, rx, tuple(axis), schemes, plan, grid, ref,
                     args.threads, args.dump_grid)


def cmd_gbc(args):
    _set_threads(args.threads)
    out = run_sweep(build_spec(args))
    sys.stdout.write(out.to_json() if args.format == "json" else out.to_csv())


def cmd_ebc(args):
    result = run_ebc(args.query, _read_json(args))
    sys.stdout.write(json.dumps(result, indent=2) + "\n")


def cmd_dof(args):
    if args.users < 1:
        raise ValidationError("--users must be >= 1")
    d = dof_sym(args.users)
    if args.format == "json":
        sys.stdout.write(json.dumps({"K": args.users, "dof": str(d), "decimal": float(d)}) + "\n")
    else:
        sys.stdout.write(f"{d} {float(d)!r}\n")


def build_parser():
    p = argparse.ArgumentParser(prog="bcfeed", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gbc", help="symmetric rates of the fading Gaussian BC vs SNR")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--users", type=int)
    g.add_argument("--tx", type=int, help="transmit antennas (default: users)")
    g.add_argument("--rx", type=int, help="receive antennas per user (default 1)")
    g.add_argument("--snr-db", type=float, help="single SNR point")
    g.add_argument("--snr-start", type=float)
    g.add_argument("--snr-stop", type=float)
    g.add_argument("--snr-step", type=float)
    g.add_argument("--snr-ref", choices=("per-antenna", "total"),
                   help="read SNR as P/(n_t sigma^2) or as P/sigma^2")
    g.add_argument("--schemes", help="comma list of JSC,JSC_FIXED_BETA,TDMA,MAT2,QMAT,UPPER")
    g.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    g.add_argument("--seed", type=int, default=0, help="overridden by BCFEED_SEED")
    g.add_argument("--chunk", type=int, default=DEFAULT_CHUNK, help=argparse.SUPPRESS)
    g.add_argument("--beta-min", type=float, default=-1.5, help="log10 of smallest beta")
    g.add_argument("--beta-max", type=float, default=1.5, help="log10 of largest beta")
    g.add_argument("--beta-points", type=int, default=60)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--dump-grid", action="store_true", help="include the beta grid (json)")
    g.add_argument("--threads", type=int, help="worker cap; never changes results")
    g.set_defaults(func=cmd_gbc)

    e = sub.add_parser("ebc", help="erasure BC region and capacity queries")
    e.add_argument("query", choices=sorted(SCHEMAS))
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="JSON file, or - for stdin")
    src.add_argument("--json", help="inline JSON")
    e.set_defaults(func=cmd_ebc)

    d = sub.add_parser("dof", help="optimal symmetric DoF with delayed CSIT")
    d.add_argument("--users", "-K", type=int, required=True)
    d.add_argument("--format", choices=("text", "json"), default="text")
    d.set_defaults(func=cmd_dof)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"bcfeed: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArithmeticError as exc:
        print(f"bcfeed: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
