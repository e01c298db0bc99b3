"""Command-line entry point ``case2``.

Exit codes: 0 success, 1 analysis error, 2 usage error. Errors are written to
stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings

from . import calibration, inference, io, matching, nonneg, oracle, simulate
from .errors import Case2Error
from .model import MultiplierMode, SensitivityParams

log = logging.getLogger("case2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _at_least_one(name):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from None
        if not math.isfinite(value) or value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be ≥ 1")
        return value
    return parse


def _probability(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("alpha must be a number") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return value


def _count(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 0:
        raise argparse.ArgumentTypeError("counts must be ≥ 0")
    return value


def _positive(text):
    value = _count(text)
    if value < 1:
        raise argparse.ArgumentTypeError("value must be ≥ 1")
    return value


def _names(text):
    return tuple(n.strip() for n in text.split(",") if n.strip())


def _table(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("table must be a,b,c,d")
    return nonneg.TwoByTwo(*(_count(p) for p in parts))


def _common(fmt):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--format", choices=("json", "csv"), default=fmt)
    p.add_argument("--out", help="write results here instead of stdout")
    p.add_argument("--threads", type=_positive, default=None,
                   help="worker cap (falls back to CASE2_THREADS)")
    return p


def _sensitivity_flags(p, grid=False):
    if not grid:
        p.add_argument("--gamma", type=_at_least_one("gamma"), default=1.0)
        p.add_argument("--theta", type=_at_least_one("theta"), default=1.0)
        p.add_argument("--delta", type=_at_least_one("delta"), default=1.0)
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--method", choices=("exact", "normal"), default="exact")
    p.add_argument("--multiplier", choices=("prop1", "printed"), default="prop1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="case2", description="Sensitivity analysis for case-case studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("match", parents=[_common("csv")], help="optimal 1:k matching")
    p.add_argument("--input", required=True, help="population CSV")
    p.add_argument("--ratio", type=_positive, default=2)
    p.add_argument("--exact", type=_names, default=(), help="exact-match covariates")
    p.add_argument("--covariates", type=_names, default=(), help="distance covariates")
    p.add_argument("--caliper", type=float, default=None)

    p = sub.add_parser("test", parents=[_common("json")], help="worst-case p-value for one a")
    p.add_argument("--input", required=True, help="matched-study CSV")
    p.add_argument("--a", type=_count, default=0)
    _sensitivity_flags(p)

    p = sub.add_parser("attribute", parents=[_common("json")], help="prediction interval")
    p.add_argument("--input", required=True, help="matched-study CSV")
    _sensitivity_flags(p)

    p = sub.add_parser("sweep", parents=[_common("csv")], help="prediction intervals on a grid")
    p.add_argument("--input", required=True, help="matched-study CSV")
    p.add_argument("--grid", required=True, help="CSV with gamma,theta,delta[,alpha]")
    _sensitivity_flags(p, grid=True)

    p = sub.add_parser("nonneg", parents=[_common("json")], help="non-negativity violations")
    p.add_argument("--table", required=True, type=_table, help="a,b,c,d")
    p.add_argument("--n", required=True, type=_count)
    p.add_argument("--alpha", type=_probability, default=0.05)

    p = sub.add_parser("calibrate", parents=[_common("json")], help="fit ratio bounds")
    p.add_argument("--input", required=True,
                   help="matched-study CSV, or population CSV with a grouping column")
    p.add_argument("--covariates", type=_names, default=())
    p.add_argument("--group", default="set_id")
    p.add_argument("--nodes", type=_positive, default=21)

    p = sub.add_parser("simulate", parents=[_common("csv")], help="synthetic matched study")
    p.add_argument("--sets", type=_positive, default=200)
    p.add_argument("--j", type=_positive, default=3)
    p.add_argument("--gamma", type=_at_least_one("gamma"), default=1.0)
    p.add_argument("--theta", type=_at_least_one("theta"), default=1.0)
    p.add_argument("--delta", type=_at_least_one("delta"), default=1.0)
    p.add_argument("--alpha-z", type=float, default=-1.0)
    p.add_argument("--rate", type=float, default=0.0, help="true attributable rate")
    p.add_argument("--seed", type=_count, default=0)
    p.add_argument("--population", action="store_true", help="write the population instead")
    p.add_argument("--truth", action="store_true", help="include ground-truth columns")

    p = sub.add_parser("verify", parents=[_common("json")], help="bound containment suites")
    p.add_argument("--n", type=_positive, default=10_000)
    p.add_argument("--j", type=_names, default=("2", "3", "4"))
    p.add_argument("--seed", type=_count, default=0)
    return parser


def _threads(args) -> int:
    if args.threads:
        return args.threads
    env = os.environ.get("CASE2_THREADS", "")
    if env.strip():
        try:
            value = int(env)
        except ValueError:
            raise UsageError("CASE2_THREADS must be a positive integer") from None
        if value < 1:
            raise UsageError("CASE2_THREADS must be a positive integer")
        return value
    return 1


def _params(args) -> SensitivityParams:
    return SensitivityParams(args.gamma, args.theta, args.delta, MultiplierMode(args.multiplier))


def _clean(obj):
    """Replace non-finite floats so the output is valid JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _json(obj) -> bytes:
    return (json.dumps(_clean(obj), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _csv(header, rows) -> bytes:
    return io._csv_text(header, rows, io._result_value).encode("utf-8")


def cmd_match(args):
    pop = io.parse_population_csv(args.input)
    spec = matching.MatchSpec(args.ratio, args.exact, args.covariates, args.caliper)
    result = matching.match_population(pop, spec)
    for uid in result.unmatched:
        log.warning("narrow unit %s has no match within the caliper", uid)
    study = matching.matched_study(pop, result)
    if args.format == "csv":
        return io.write_study_csv(study)
    covs = [k for k in pop[0].covariates]
    balance = matching.balance_table(pop, result, covs)
    return _json({
        "n_sets": study.I,
        "J": study.J,
        "total_distance": result.total_distance,
        "unmatched": list(result.unmatched),
        "sets": [{"set_id": s.set_id, "units": [u.unit_id for u in s.units]} for s in study.sets],
        "balance": [{"covariate": b.covariate, "smd": b.smd, "mean_narrow": b.mean_narrow,
                     "mean_marginal": b.mean_marginal, "flagged": b.flagged} for b in balance],
    })


def cmd_test(args):
    study = io.parse_matched_csv(args.input)
    result = inference.worst_case_pvalue(study, _params(args), args.a, args.method)
    if args.format == "csv":
        return _csv(["a", "statistic", "p_upper", "method", "flag"],
                    [[result.a, result.statistic, result.p_upper, result.method, result.flag]])
    return _json(result.as_dict())


def cmd_attribute(args):
    study = io.parse_matched_csv(args.input)
    params = _params(args)
    a_star, trace = inference.prediction_interval(study, params, args.alpha, args.method)
    if args.format == "csv":
        return _csv(["a", "p_upper"], [[a, p] for a, p in trace])
    return _json({
        "gamma": params.gamma, "theta": params.theta, "delta": params.delta,
        "alpha": args.alpha, "method": args.method, "multiplier": args.multiplier,
        "statistic": inference.sign_score(study),
        "a_star": a_star,
        "trace": [{"a": a, "p_upper": p} for a, p in trace],
    })


def _read_grid(path, multiplier):
    header, body = io._read_rows(path)
    for col in ("gamma", "theta", "delta"):
        if col not in header:
            raise UsageError(f"grid is missing column {col!r}")
    idx = {c: header.index(c) for c in header}
    grid = []
    for k, row in enumerate(body, start=2):
        try:
            values = {c: float(row[idx[c]]) for c in ("gamma", "theta", "delta")}
            alpha = float(row[idx["alpha"]]) if "alpha" in idx and row[idx["alpha"]].strip() else None
        except ValueError:
            raise UsageError(f"grid line {k}: non-numeric value") from None
        for name, v in values.items():
            if not math.isfinite(v) or v < 1:
                raise UsageError(f"grid line {k}: {name} must be ≥ 1")
        if alpha is not None and not 0 < alpha < 1:
            raise UsageError(f"grid line {k}: alpha must lie in (0, 1)")
        grid.append((SensitivityParams(values["gamma"], values["theta"], values["delta"],
                                       MultiplierMode(multiplier)), alpha))
    if not grid:
        raise UsageError("grid has no rows")
    return grid


def cmd_sweep(args):
    study = io.parse_matched_csv(args.input)
    grid = _read_grid(args.grid, args.multiplier)
    rows = inference.sweep(study, grid, args.alpha, args.method, _threads(args))
    return io.write_results(rows, args.format)


def cmd_nonneg(args):
    a_star, trace = nonneg.nonneg_interval(args.table, args.n, args.alpha)
    if args.format == "csv":
        return _csv(["A", "b_i", "d_i", "p_max"], [[A, al[0], al[1], p] for A, al, p in trace])
    t = args.table
    return _json({
        "table": [t.a, t.b, t.c, t.d], "n": args.n, "alpha": args.alpha,
        "p_unadjusted": nonneg.fisher_p(t),
        "a_star": a_star,
        "trace": [{"A": A, "allocation": list(al), "p_max": p} for A, al, p in trace],
    })


def cmd_calibrate(args):
    records = io.parse_any_csv(args.input)
    fit, design = calibration.fit_records(records, args.covariates, args.group, n_nodes=args.nodes)
    theta_hat, delta_hat = calibration.ratio_bounds(fit, design.X, design.group_array())
    for caveat in calibration.CAVEATS:
        log.warning("%s", caveat)
    out = fit.as_dict()
    out.update({"theta_hat": theta_hat, "delta_hat": delta_hat, "group": args.group,
                "warnings": list(calibration.CAVEATS)})
    if args.format == "csv":
        rows = [[k, v] for k, v in fit.coefficients.items()]
        rows += [["random_intercept_sd", fit.random_intercept_sd],
                 ["theta_hat", theta_hat], ["delta_hat", delta_hat]]
        return _csv(["term", "value"], rows)
    return _json(out)


def cmd_simulate(args):
    if not 0 <= args.rate < 1:
        raise UsageError("rate must lie in [0, 1)")
    cfg = simulate.SimConfig(n_sets=args.sets, J=args.j, gamma=args.gamma, theta=args.theta,
                             delta=args.delta, alpha_z=args.alpha_z,
                             true_attributable_rate=args.rate, seed=args.seed)
    if args.population:
        records = simulate.simulate_population(cfg)
        if args.format == "csv":
            return io.write_population_csv(records, truth=args.truth)
        return _json([{"unit_id": r.unit_id, "case_type": r.case_type, "treated": r.treated,
                       "covariates": r.covariates, **({"truth": r.truth} if args.truth else {})}
                      for r in records])
    study, true_A = simulate.simulate_matched(cfg, truth=args.truth)
    if args.truth:
        log.info("true attributable count: %d", true_A)
    if args.format == "csv":
        return io.write_study_csv(study)
    out = {"n_sets": study.I, "J": study.J, "statistic": inference.sign_score(study),
           "units": [{"set_id": u.set_id, "unit_id": u.unit_id, "treated": u.treated,
                      "narrow": u.narrow, "covariates": dict(u.covariates)} for u in study.units()]}
    if args.truth:
        out["true_A"] = true_A
    return _json(out)


def cmd_verify(args):
    try:
        J_values = tuple(int(j) for j in args.j)
    except ValueError:
        raise UsageError("--j must be a comma-separated list of integers") from None
    if any(j < 2 or j > oracle.MAX_UNITS for j in J_values):
        raise UsageError(f"--j values must lie in 2..{oracle.MAX_UNITS}")
    contain = oracle.containment_suite(args.n, J_values, seed=args.seed, threads=_threads(args))
    attain = oracle.attainment_suite(J_values)
    ok = (all(v["violations"] == 0 for v in contain.values())
          and all(r["ok"] for r in attain))
    out = {
        "containment": {str(J): v for J, v in contain.items()},
        "attainment": {"checked": len(attain), "failed": sum(not r["ok"] for r in attain),
                       "max_error": max(max(r["lower_error"], r["upper_error"]) for r in attain)},
        "pass": ok,
    }
    if args.format == "csv":
        rows = [["containment", J, v["checked"], v["violations"]] for J, v in contain.items()]
        rows.append(["attainment", "", out["attainment"]["checked"], out["attainment"]["failed"]])
        body = _csv(["suite", "J", "checked", "failures"], rows)
    else:
        body = _json(out)
    return body, (0 if ok else 1)


COMMANDS = {
    "match": cmd_match, "test": cmd_test, "attribute": cmd_attribute, "sweep": cmd_sweep,
    "nonneg": cmd_nonneg, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}, ensure_ascii=False) + "\n")


def run(argv=None) -> int:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.propagate = False
    try:
        return _run(argv)
    finally:
        log.removeHandler(handler)


def _run(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: log.warning("%s", msg)
            out = COMMANDS[args.command](args)
    except UsageError as exc:
        _error("UsageError", str(exc))
        return 2
    except Case2Error as exc:
        _error(type(exc).__name__, str(exc))
        return 1
    except OSError as exc:
        _error("IOError", str(exc))
        return 1
    code = 0
    if isinstance(out, tuple):
        out, code = out
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(out)
    else:
        sys.stdout.buffer.write(out)
        sys.stdout.flush()
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
