"""Command line front end.

    mixplap sequence --config configs/cthm2_1d.json --out out/cthm2
    mixplap verify-regularity --config configs/cthm2_1d.json
    mixplap convergence --config configs/cthm2_1d.json
    mixplap selftest

Exit codes: 0 ok, 1 config error, 2 solver failure, 3 invariant violation, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import pipeline
from .config import load_config
from .errors import (ConfigError, Divergence, InvalidInput, InvariantViolation,
                     NonConvergence, NumericalIntegrationError)
from .grid import to_csv
from .regularity import reports_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("mixplap")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Output directory plus the provenance stamped into every file."""

    def __init__(self, out, sha, seed):
        self.out = out
        self.sha = sha
        self.seed = seed

    def header(self, *extra):
        return [f"config_sha256={self.sha}", f"seed={self.seed}", *extra]

    def json(self, name, payload):
        body = {"config_sha256": self.sha, "seed": self.seed, **payload}
        write_atomic(os.path.join(self.out, name), dumps(body))

    def raw_json(self, name, payload):
        write_atomic(os.path.join(self.out, name), dumps(payload))

    def csv(self, name, text):
        write_atomic(os.path.join(self.out, name), text)


def _checks_payload(checks):
    return {"passed": all(c.passed for c in checks if c.asserted),
            "checks": [c.to_dict() for c in checks]}


def _load(args):
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.schedule_k is not None:
        if args.schedule_k < 0:
            raise ConfigError("--schedule-k must be nonnegative")
        cfg = dataclasses.replace(cfg, schedule_k=args.schedule_k)
    out = args.out or cfg.out or os.path.join("out", cfg.name)
    return cfg, Run(out, cfg.sha256, cfg.seed)


def cmd_solve(args):
    cfg, run = _load(args)
    u, rep = pipeline.solve_single(cfg, threads=args.threads)
    run.csv("solution.csv", to_csv(u, run.header()))
    run.json("solve_report.json", rep.to_dict())
    return EXIT_OK


def _sequence_outputs(run, res):
    records = []
    for r in res.sequence.to_json_records():
        records.append({"config_sha256": run.sha, "seed": run.seed, **r})
    run.raw_json("sequence.json", records)
    run.csv("solution.csv", to_csv(res.sequence.final, run.header(f"n={res.sequence.ns[-1]}")))
    if res.sequence.limit is not None:
        run.csv("limit_solution.csv", to_csv(res.sequence.limit, run.header("n=inf")))
    run.json("checks.json", {"regime": res.regime.to_dict(), **_checks_payload(res.checks)})


def cmd_sequence(args):
    cfg, run = _load(args)
    res = pipeline.run_pipeline(cfg, threads=args.threads)
    _sequence_outputs(run, res)
    for c in res.checks:
        log.info("%s %s", "PASS" if c.passed else ("FAIL" if c.asserted else "note"), c.name)
    return EXIT_OK if res.passed else EXIT_INVARIANT


def cmd_verify(args):
    cfg, run = _load(args)
    res = pipeline.run_pipeline(cfg, threads=args.threads)
    _sequence_outputs(run, res)
    sw = pipeline.verification_sweep(cfg, res, threads=args.threads)
    base, fine = sw.grids["base"], sw.grids.get("refined")
    rows = [(r, base) for r in sw.reports] + [(r, fine) for r in sw.refined_reports]
    lookup = {id(r): g for r, g in rows}
    run.csv("sweep.csv", reports_to_csv([r for r, _ in rows], lambda r: lookup[id(r)],
                                        run.header()))
    run.csv("constant_fields.csv", reports_to_csv(sw.constant_reports, base, run.header()))
    run.json("verify.json", {"drift": sw.drift, **_checks_payload(sw.checks)})
    ok = res.passed and sw.passed
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_convergence(args):
    Ms, cases = (15, 31, 63), ("quadratic", "sine")
    sha, seed = "none", args.seed or 0
    if args.config:
        cfg, _ = _load(args)
        Ms, cases, sha, seed = cfg.convergence_M, cfg.convergence_cases, cfg.sha256, cfg.seed
    out = args.out or os.path.join("out", "convergence")
    run = Run(out, sha, seed)
    rows = pipeline.convergence_study(Ms, cases)
    lines = ["case,M,h,sup_error,nodal_error,ratio"]
    for r in rows:
        ratio = "" if r["ratio"] is None else f"{r['ratio']:.17g}"
        lines.append(f"{r['case']},{r['M']},{r['h']:.17g},{r['sup_error']:.17g},"
                     f"{r['nodal_error']:.17g},{ratio}")
    run.csv("convergence.csv", "".join(f"# {h}\n" for h in run.header()) + "\n".join(lines) + "\n")
    ok = pipeline.convergence_passed(rows)
    run.json("convergence.json", {"rows": rows, "passed": ok})
    for r in rows:
        log.info("%-9s M=%-3d err=%.3e ratio=%s", r["case"], r["M"], r["sup_error"],
                 "-" if r["ratio"] is None else f"{r['ratio']:.2f}")
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_selftest(args):
    seed = args.seed or 0
    sha = "none"
    if args.config:
        cfg, _ = _load(args)
        sha = cfg.sha256
    out = args.out or os.path.join("out", "selftest")
    run = Run(out, sha, seed)
    rows = pipeline.selftest(seed=seed)
    ok = all(r["violations"] == 0 for r in rows)
    run.json("selftest.json", {"rows": rows, "passed": ok})
    for r in rows:
        log.info("%s %s", "PASS" if r["violations"] == 0 else "FAIL",
                 {k: v for k, v in r.items() if k in ("check", "p", "q", "N")})
    return EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {
    "solve": cmd_solve,
    "sequence": cmd_sequence,
    "verify-regularity": cmd_verify,
    "convergence": cmd_convergence,
    "selftest": cmd_selftest,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="mixplap", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment configuration (JSON)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--schedule-k", type=int, dest="schedule_k",
                        help="largest n is 2^K")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidInput) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, Divergence, NumericalIntegrationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvariantViolation as exc:
        print(f"invariant violated ({exc.clause}): {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
