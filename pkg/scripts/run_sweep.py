"""Run a scenario sweep from a JSON config and print the rejection table.

    python3 scripts/run_sweep.py configs/quadratic_design.json --reps 200 --out-dir out/quadratic
"""
import argparse

from trajsum.harness import load_config, run_sweep


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default="out/sweep")
    args = p.parse_args()
    cfg = load_config(args.config, seed=args.seed, reps=args.reps)
    rows = run_sweep(cfg, args.out_dir, threads=args.threads)
    for r in rows:
        flag = " *" if r.flagged else ""
        print(f"{r.scenario:8s} {r.sigma:4.1f} {r.missingness:8s} {r.handling:3s} {r.estimator:7s} "
              f"{r.rate:.3f} ({r.se:.3f}){flag}")
    print(f"wrote {args.out_dir}/results.csv, power_panels.csv, manifest.json")


if __name__ == "__main__":
    main()
