#!/usr/bin/env python3
"""Regenerate the bundled CSV fixtures under data/ (deterministic)."""

import argparse
import pathlib

import numpy as np


def write_csv(path, header, cols):
    rows = np.column_stack(cols)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def heteroscedastic(rng, out):
    # Var(eps_i) = |x1_i|^3, the synthetic stand-in for the regression examples.
    n = 200
    x1 = rng.uniform(0.5, 5.0, n)
    x2 = rng.normal(size=n)
    y = 1.0 + 2.0 * x1 - 0.5 * x2 + np.abs(x1) ** 1.5 * rng.normal(size=n)
    write_csv(out / "heteroscedastic.csv", ["x1", "x2", "y"], [x1, x2, y])


def groups(rng, out):
    n = 90
    g = np.repeat([1.0, 2.0, 3.0], n // 3)
    rng.shuffle(g)
    x = rng.normal(size=n)
    sd = np.sqrt(np.array([1.0, 4.0, 16.0]))[g.astype(int) - 1]
    y = 0.5 + x + sd * rng.normal(size=n)
    write_csv(out / "groups.csv", ["group", "x", "y"], [g, x, y])


def certify_fixtures(rng, out, count):
    d = out / "certify_fixtures"
    d.mkdir(exist_ok=True)
    for k in range(count):
        n = 2 + k % 5
        truth = np.exp(rng.uniform(np.log(0.01), np.log(100.0), n))
        kind = k % 3
        if kind == 0:
            cand = truth ** rng.uniform(0.0, 1.0)
        elif kind == 1:
            cand = np.exp(rng.uniform(np.log(0.01), np.log(100.0), n))
        else:
            cand = truth.copy()
            cand[rng.integers(n)] *= np.exp(rng.uniform(-1.5, 1.5))
        write_csv(d / f"case_{k:03d}_candidate.csv", ["w"], [cand])
        write_csv(d / f"case_{k:03d}_truth.csv", ["w"], [truth])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--count", type=int, default=100)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    heteroscedastic(rng, out)
    groups(rng, out)
    certify_fixtures(rng, out, args.count)


if __name__ == "__main__":
    main()
