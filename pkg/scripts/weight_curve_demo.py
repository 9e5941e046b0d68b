"""Estimate the weight function for one simulated dataset and print a coarse text plot."""
import argparse

import numpy as np

from trajsum.basisfn import BasisSpec, make_basis
from trajsum.lmm import fit_lmm
from trajsum.simgen import generate, make_scenario
from trajsum.wats import default_weight_basis, optimize_weight


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--scenario", default="Q1vQ2")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    data = generate(make_scenario(args.scenario), args.sigma, args.n, args.seed)
    dom = (data.grid.start, data.grid.end)
    fits = fit_lmm(data, make_basis(BasisSpec.polynomial(2, dom)))
    a, b = data.labels
    w = optimize_weight(fits[a], fits[b], default_weight_basis(dom), seed=args.seed)
    print(f"squared standard distance: optimised {w.objective:.3f}, uniform {w.uniform_objective:.3f}"
          f"{' (fallback to uniform)' if w.fallback else ''}")
    t, y = w.curve(29)
    top = max(np.max(y), 1e-12)
    for ti, yi in zip(t, y):
        print(f"{ti:5.2f} {yi:7.4f} " + "#" * int(round(40 * yi / top)))


if __name__ == "__main__":
    main()
