"""Command-line interface: ``simulate``, ``analyze``, ``weights`` and ``validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..basisfn import BasisSpec, make_basis
from ..data import DatasetError
from ..lmm import fit_lmm
from ..simgen import generate, make_scenario
from ..wats import default_weight_basis, optimize_weight
from .analyze import AnalyzeOptions, analyze, two_arm
from .config import ConfigError, load_config
from .io import IngestError, ingest_csv, write_json, write_table, write_weight_curve
from .runner import run_sweep, versions

log = logging.getLogger("trajsum")


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed, reps=args.reps)
    log.info("running %d cells", len(cfg.cells))
    rows = run_sweep(cfg, args.out_dir, threads=args.threads)
    for r in rows:
        print(f"{r.scenario:8s} sigma={r.sigma:<4g} {r.missingness:8s} {r.handling:3s} {r.estimator:7s} "
              f"rate={r.rate:.3f} se={r.se:.3f} failures={r.failures}")
    return 0


def _options(args) -> AnalyzeOptions:
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    return AnalyzeOptions.from_config(raw)


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    data = ingest_csv(args.data)
    for sid, why in data.rejected.items():
        print(f"rejected subject {sid}: {why}", file=sys.stderr)
    opts = _options(args)
    report = analyze(data, opts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    summary["rejected_subjects"] = data.rejected
    write_json(summary, out / "report.json")
    cols = ("subject_id", "group", "n_obs", "cs", "mc") + (("wats",) if report.weight is not None else ())
    write_table(report.subjects, cols, out / "subjects.csv")
    if report.weight is not None:
        write_weight_curve(report.weight, out / "weight_curve.csv")
    write_json({"command": "analyze", "data": str(args.data), "options": opts.__dict__,
                "wall_time_s": round(time.perf_counter() - t0, 3), "versions": versions()},
               out / "manifest.json")
    a, b = report.groups
    print(f"arms: {a} (n={report.n[a]}) vs {b} (n={report.n[b]})")
    for name, t in report.tests.items():
        print(f"{name:7s} stat={t.statistic:8.4f} p_two={t.p_two_sided:.4f} p_one={t.p_one_sided:.4f}"
              + (f" df={t.df:.1f}" if t.df is not None else ""))
    return 0


def cmd_weights(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = _options(args)
    if args.data is not None:
        data = two_arm(ingest_csv(args.data), opts.groups)
        source = {"data": str(args.data)}
    else:
        sc = make_scenario(args.scenario)
        seed = 0 if args.seed is None else args.seed
        data = generate(sc, args.sigma, args.n, seed)
        source = {"scenario": sc.id, "sigma": args.sigma, "n_per_group": args.n, "seed": seed}
    dom = (data.grid.start, data.grid.end)
    spec = BasisSpec.polynomial(2, dom) if opts.basis is None else BasisSpec.from_config(opts.basis, dom)
    kw = {"strict": False}
    if spec.kind != "polynomial" and opts.random_dim is None:
        kw["random_basis"] = make_basis(BasisSpec.polynomial(2, dom))
    fits = fit_lmm(data, make_basis(spec), opts.random_dim, **kw)
    ub = (default_weight_basis(dom) if opts.weight_basis is None
          else make_basis(BasisSpec.from_config(opts.weight_basis, dom)))
    a, b = data.labels
    w = optimize_weight(fits[a], fits[b], ub, seed=opts.seed)
    write_weight_curve(w, out / "weight_curve.csv")
    write_json({"command": "weights", **source, "v": w.normalized_v, "objective": w.objective,
                "uniform_objective": w.uniform_objective, "fallback": w.fallback,
                "integral": w.integral(), "versions": versions()}, out / "manifest.json")
    print(f"objective={w.objective:.4f} uniform={w.uniform_objective:.4f} fallback={w.fallback}")
    return 0


def cmd_validate(args) -> int:
    if args.config is None and args.data is None:
        raise ConfigError("validate needs --config and/or --data")
    if args.config is not None:
        raw = _read_json(args.config)
        if "scenarios" in raw:
            cfg = load_config(args.config, seed=args.seed, reps=args.reps)
            reps = sum(c.reps for c in cfg.cells)
            print(f"config OK: {len(cfg.cells)} cells, {reps} replicates")
        else:
            AnalyzeOptions.from_config(raw)
            print("analysis options OK")
    if args.data is not None:
        data = ingest_csv(args.data)
        print(f"data OK: {data.n} subjects, groups {list(data.labels)}, times {list(data.times)}, "
              f"{data.n_missing} missing cells, {len(data.rejected)} rejected subjects")
        for sid, why in data.rejected.items():
            print(f"  rejected {sid}: {why}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajsum", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("simulate", help="run a scenario sweep")
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="analyse a two-arm dataset CSV")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("weights", help="estimate the weight function only")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--scenario", default="Q1vQ2")
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=100)
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("validate", help="check a config file and/or dataset")
    common(sp)
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, IngestError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
