"""Harnack and weak Harnack quotients of one config across several meshes.

    python3 scripts/refinement_study.py configs/cthm2_1d.json --M 31 63 127
"""
import argparse

from mixplap.config import load_config
from mixplap.energy import ball_stats
from mixplap.pipeline import build_problem, companion_solution
from mixplap.regularity import harnack_report, weak_harnack_levels, weak_harnack_report
from mixplap.scheme import approx_step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--M", type=int, nargs="+", default=[31, 63, 127])
    ap.add_argument("--n", type=int, default=1024)
    args = ap.parse_args()
    cfg = load_config(args.config)
    vc = cfg.verify
    print("M     r     harnack(companion)  weak_harnack(l) on u_n")
    for M in args.M:
        prob, _ = build_problem(cfg, cfg.with_grid((M,) * cfg.dim).grid())
        uc = companion_solution(prob, vc.x0, vc.R, args.n)
        u, _ = approx_step(prob, args.n)
        for r in vc.radii:
            h = harnack_report(uc, vc.x0, r, vc.R, prob.exps).c_fit
            wh = [weak_harnack_report(u, vc.x0, r, vc.R, l, prob.exps).c_fit
                  for l in weak_harnack_levels(prob.exps)]
            inf = ball_stats(u, vc.x0, r).inf
            print(f"{M:<5d} {r:<5g} {h:<19.6f} " + " ".join(f"{c:.6f}" for c in wh)
                  + f"   inf u_n = {inf:.4f}")


if __name__ == "__main__":
    main()
