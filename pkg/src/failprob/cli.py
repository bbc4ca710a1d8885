"""Command-line front end.

`failprob estimate` runs one seeded estimator and prints a reproducible run
manifest as JSON on stdout (diagnostics go to stderr). `failprob benchmark`
drives the replication study and writes summary and per-run CSV files.
Exit codes: 0 success, 2 configuration error, 3 estimator error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import CASES, recompute_reference, run_rmse_experiment
from .bss import BssConfig, run_bss
from .core import Direction, InputDistribution, Normal, Problem
from .estimators import SubsetSimConfig, monte_carlo_estimate, run_subset_simulation
from .expr import ExprError, compile_limit_state

SCHEMA_VERSION = 1
_METHODS = ("mc", "ss", "bss")


class ConfigError(ValueError):
    pass


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"unserializable {type(obj)!r}")


def _load_custom_problem(spec: dict) -> Problem:
    try:
        marginals = []
        for entry in spec["marginals"]:
            params = entry["normal"]
            marginals.append(Normal(float(params["mean"]), float(params["sd"])))
        dim = len(marginals)
        direction = Direction(spec.get("direction", "above").lower())
        fn = compile_limit_state(spec["limit_state"], dim)
        return Problem(
            limit_state=fn,
            input=InputDistribution(tuple(marginals)),
            threshold=float(spec["threshold"]),
            direction=direction,
        )
    except ExprError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem file: {exc}") from None


def _resolve_problem(name: str) -> tuple[Problem, dict]:
    if name in CASES:
        return CASES[name]().problem, {"case": name}
    if name.startswith("file:"):
        path = Path(name[5:])
        if not path.exists():
            raise ConfigError(f"problem file not found: {path}")
        spec = json.loads(path.read_text(encoding="utf-8"))
        return _load_custom_problem(spec), {"custom": spec}
    raise ConfigError(f"unknown problem {name!r} (expected a case name or file:<path>)")


def _estimate_once(method: str, problem: Problem, m: int, p0: float, seed: int,
                   want_trace: bool):
    if method == "mc":
        return monte_carlo_estimate(problem, m, seed)
    if method == "ss":
        cfg = SubsetSimConfig(m=m, m0=int(round(p0 * m)))
        return run_subset_simulation(problem, cfg, seed)
    cfg = BssConfig(m=m, p0=p0)
    return run_bss(problem, cfg, seed, collect_trace=want_trace)


def _write_trace(path: str, result, dim: int) -> None:
    rows = result.trace or []
    cols = [f"x{i + 1}" for i in range(dim)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n," + ",".join(cols) + ",criterion,u_t,stage\n")
        for row in rows:
            if "x_new" not in row:
                continue
            fh.write(
                f"{row['n']},"
                + ",".join(repr(float(v)) for v in row["x_new"])
                + f",{row['criterion']!r},{row['u_t']!r},{row['stage']}\n"
            )


def cmd_estimate(args) -> int:
    if args.replay:
        return _cmd_replay(args)
    if args.method is None or args.problem is None or args.m is None or args.seed is None:
        raise ConfigError("--method, --problem, --m and --seed are required")
    if args.method not in _METHODS:
        raise ConfigError(f"unknown method {args.method!r}")
    if not 0.0 < args.p0 < 1.0:
        raise ConfigError("p0 must be in (0, 1)")
    if args.m < 1:
        raise ConfigError("m must be >= 1")
    problem, problem_spec = _resolve_problem(args.problem)
    manifest = _run_to_manifest(args.method, problem, problem_spec,
                                args.m, args.p0, args.seed, bool(args.trace))
    if args.trace:
        _write_trace(args.trace, manifest.pop("_result_obj"), problem.dim)
    else:
        manifest.pop("_result_obj")
    text = json.dumps(manifest, indent=2, default=_json_default)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0 if manifest["result"]["error"] is None else 3


def _run_to_manifest(method: str, problem: Problem, problem_spec: dict,
                     m: int, p0: float, seed: int, want_trace: bool) -> dict:
    start = datetime.datetime.now(datetime.timezone.utc).isoformat()
    result = _estimate_once(method, problem, m, p0, seed, want_trace)
    end = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return {
        "schema": SCHEMA_VERSION,
        "tool": "failprob",
        "version": __version__,
        "command": "estimate",
        "method": method,
        "problem": problem_spec,
        "config": {"m": m, "p0": p0},
        "seed": seed,
        "timestamps": {"start": start, "end": end},
        "host": {"platform": platform.platform(), "python": platform.python_version()},
        "result": result.to_dict(),
        "_result_obj": result,
    }


def _cmd_replay(args) -> int:
    path = Path(args.replay)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("schema") != SCHEMA_VERSION:
        raise ConfigError("unsupported manifest schema")
    spec = manifest["problem"]
    if "case" in spec:
        problem, problem_spec = _resolve_problem(spec["case"])
    else:
        problem, problem_spec = _load_custom_problem(spec["custom"]), spec
    new = _run_to_manifest(manifest["method"], problem, problem_spec,
                           manifest["config"]["m"], manifest["config"]["p0"],
                           manifest["seed"], False)
    new.pop("_result_obj")
    print(json.dumps(new, indent=2, default=_json_default))
    old_alpha = manifest["result"]["alpha_hat"]
    new_alpha = new["result"]["alpha_hat"]
    if new_alpha != old_alpha:
        print(f"replay mismatch: alpha_hat {new_alpha!r} != recorded {old_alpha!r}",
              file=sys.stderr)
        return 3
    print("replay ok: alpha_hat reproduced exactly", file=sys.stderr)
    return 0


def _worker_cap(jobs: int) -> int:
    cap = os.environ.get("RARE_EVENT_THREADS")
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError("RARE_EVENT_THREADS must be an integer")
    return max(1, jobs)


def cmd_benchmark(args) -> int:
    if args.case not in CASES:
        raise ConfigError(f"unknown case {args.case!r}")
    case = CASES[args.case]()
    if args.recompute_reference:
        mean, cov = recompute_reference(case, m=args.ref_m, runs=args.ref_runs, seed=args.seed)
        print(json.dumps({
            "case": args.case, "alpha_ref_table": case.alpha_ref,
            "alpha_recomputed_mean": mean, "recomputed_cov": cov,
            "m": args.ref_m, "runs": args.ref_runs,
        }, indent=2))
        return 0
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in _METHODS:
            raise ConfigError(f"unknown method {m!r}")
    try:
        m_values = [int(v) for v in args.m_list.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--m-list must be a comma-separated list of integers")
    if not m_values or args.runs < 2:
        raise ConfigError("need a non-empty --m-list and --runs >= 2")
    jobs = _worker_cap(args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_dir = out_dir / "manifests"
    manifest_dir.mkdir(exist_ok=True)

    summary_lines: list[str] = []
    run_lines: list[str] = []
    for mi, method in enumerate(methods):
        table = run_rmse_experiment(case, method, m_values, args.runs, args.seed, jobs=jobs)
        csv = table.to_csv().splitlines()
        per = table.per_run_csv().splitlines()
        if mi == 0:
            summary_lines.append(csv[0])
            run_lines.append(per[0])
        summary_lines.extend(csv[1:])
        run_lines.extend(per[1:])
        for row in table.per_run:
            name = f"{args.case}-{method}-m{row['m']}-run{row['run']}.json"
            (manifest_dir / name).write_text(
                json.dumps({
                    "schema": SCHEMA_VERSION, "tool": "failprob", "version": __version__,
                    "command": "benchmark", "case": args.case, "method": method,
                    "seed": args.seed, "m": row["m"], "run": row["run"],
                    "alpha_hat": row["alpha_hat"], "delta_hat": row["delta_hat"],
                    "n_total": row["n_total"], "n_reported": row["n_reported"],
                }, indent=2, default=_json_default) + "\n",
                encoding="utf-8",
            )
    (out_dir / "rmse.csv").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    (out_dir / "runs.csv").write_text("\n".join(run_lines) + "\n", encoding="utf-8")
    print((out_dir / "rmse.csv").read_text(encoding="utf-8"), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="failprob",
        description="Rare-event failure probability estimation "
                    "(Monte Carlo, subset simulation, Bayesian subset simulation).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run one seeded estimator, print a JSON manifest")
    est.add_argument("--method", choices=_METHODS, default=None)
    est.add_argument("--problem", help="four-branch | cantilever | oscillator | file:<path>")
    est.add_argument("--m", type=int, default=None, help="sample / particle count")
    est.add_argument("--p0", type=float, default=0.1, help="per-stage conditional probability")
    est.add_argument("--seed", type=int, default=None, help="root seed (u64)")
    est.add_argument("--out", help="also write the manifest JSON to this path")
    est.add_argument("--trace", help="write per-iteration selection trace CSV (bss)")
    est.add_argument("--replay", help="re-run from a manifest and verify alpha_hat")
    est.set_defaults(fn=cmd_estimate)

    ben = sub.add_parser("benchmark", help="replication study on a benchmark case")
    ben.add_argument("--case", required=True, help="|".join(CASES))
    ben.add_argument("--methods", default="bss", help="comma-separated subset of mc,ss,bss")
    ben.add_argument("--m-list", dest="m_list", default="1000", help="comma-separated sample sizes")
    ben.add_argument("--runs", type=int, default=20)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out-dir", dest="out_dir", default="bench-out")
    ben.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    ben.add_argument("--recompute-reference", action="store_true",
                     help="sanity-check the reference value with subset simulation")
    ben.add_argument("--ref-m", type=int, default=1_000_000)
    ben.add_argument("--ref-runs", type=int, default=10)
    ben.set_defaults(fn=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.fn(args)
    except (ConfigError, ExprError, ValueError, json.JSONDecodeError) as exc:
        print(f"failprob: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # estimator failures
        print(f"failprob: estimator error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
