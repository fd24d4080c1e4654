#!/usr/bin/env python3
"""Conformality quotients of the inversion, a dilation and an isometry under shrinking steps.

Writes one CSV per map and prints the worst relative error per step size plus the
Richardson-extrapolated error for the inversion.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from grushin_lab import conformal as cf
from grushin_lab.chart import GrushinParams, homogeneous_norm
from grushin_lab.distance import conformality_quotient
from grushin_lab.suites import QUOTIENT_EPS, quotient_base_point


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--q", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--norm", type=float, default=2.0, help="homogeneous norm of the base point")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="tables")
    args = ap.parse_args(argv)

    prm = GrushinParams(args.p, args.q, args.alpha)
    z = quotient_base_point(prm, args.norm)
    rng = np.random.default_rng(args.seed)
    chains = {
        "inversion": cf.MapChain([cf.Inversion()], prm),
        "dilation": cf.MapChain([cf.Dilation(1.7)], prm),
        "isometry": cf.MapChain([cf.Isometry(cf.random_orthogonal(prm.p, rng), cf.random_orthogonal(prm.q, rng),
                                             rng.uniform(-1, 1, prm.q))], prm),
    }
    print(f"base point {np.round(z.coords, 4)}, ||z|| = {homogeneous_norm(z, prm):.4f}")
    for name, chain in chains.items():
        tab = conformality_quotient(chain, z, QUOTIENT_EPS, seed=args.seed)
        path = tab.to_csv(Path(args.out) / f"quotient_{name}.csv")
        w = tab.worst_error()
        print(f"{name}: target {tab.target:.6g} -> {path}")
        for eps in sorted(w, reverse=True):
            print(f"  eps={eps:<8g} worst rel error {w[eps]:.3e}")
        if name == "inversion":
            print(f"  extrapolated {tab.worst_extrapolated_error():.3e}, "
                  f"decay factors {', '.join(f'{d:.3f}' for d in tab.decay_factors())}")


if __name__ == "__main__":
    main()
