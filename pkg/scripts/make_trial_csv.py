"""Write a synthetic two-arm trial in the dataset CSV layout, with monotone dropout.

The grid (weeks 0,1,2,3,4,6,8) and variance components are chosen to resemble a
depression trial scored on a 0-52 scale; they are not estimates from real data.
"""
import argparse

from trajsum.harness.io import write_dataset_csv
from trajsum.missing import MissingnessSpec, apply_missingness
from trajsum.simgen import embarc_like_trial


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="trial.csv")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--effect", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    data = embarc_like_trial(args.n, seed=args.seed, effect=args.effect)
    law = (0.0, 0.03, 0.03, 0.05, 0.09, 0.8)
    data = apply_missingness(data, MissingnessSpec.dropout(law), args.seed)
    write_dataset_csv(data, args.out)
    print(f"wrote {args.out}: {data.n} subjects, {data.n_missing} missing cells")


if __name__ == "__main__":
    main()
