"""Run the approximation sequence and the regularity sweep on every battery config.

    python3 scripts/run_battery.py [--no-refine] [--out out/battery]
"""
import argparse
import glob
import json
import os
import time

from mixplap.cli import dumps, write_atomic
from mixplap.config import load_config
from mixplap.pipeline import run_pipeline, verification_sweep

BATTERY = ["regime_a_1d", "cthm1_p3_1d", "cthm1_p15_1d", "cthm2_1d", "b_thm2_1d", "cthm3_1d",
           "cthm2_2d"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--configs", default=os.path.join(os.path.dirname(__file__), "..", "configs"))
    ap.add_argument("--out", default="out/battery")
    ap.add_argument("--no-refine", action="store_true")
    args = ap.parse_args()
    summary = []
    for name in BATTERY:
        path = os.path.join(args.configs, name + ".json")
        if not glob.glob(path):
            continue
        cfg = load_config(path)
        t0 = time.perf_counter()
        res = run_pipeline(cfg)
        t1 = time.perf_counter()
        sw = verification_sweep(cfg, res, refine=not args.no_refine)
        t2 = time.perf_counter()
        worst = max((d["ratio"] for d in sw.drift), default=float("nan"))
        print(f"{name:14s} regime={res.regime.tag:7s} n_last={res.sequence.ns[-1]:5d} "
              f"seq={'ok' if res.passed else 'FAIL'} sweep={'ok' if sw.passed else 'FAIL'} "
              f"drift={worst:.3f} t_seq={t1 - t0:.1f}s t_sweep={t2 - t1:.1f}s")
        for c in res.checks + sw.checks:
            if c.asserted and not c.passed:
                print(f"    failed: {c.name} {json.dumps(c.details, default=str)[:200]}")
        summary.append({"name": name, "config_sha256": cfg.sha256, "seed": cfg.seed,
                        "regime": res.regime.tag, "sequence_passed": res.passed,
                        "sweep_passed": sw.passed, "worst_drift": worst,
                        "checks": [c.to_dict() for c in res.checks + sw.checks]})
    write_atomic(os.path.join(args.out, "summary.json"), dumps(summary))


if __name__ == "__main__":
    main()
