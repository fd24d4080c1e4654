#!/usr/bin/env python3
"""Push homogeneous spheres through the inversion and report which family each image fits."""
from __future__ import annotations

import argparse

import numpy as np

from grushin_lab import conformal as cf
from grushin_lab import umbilic as um
from grushin_lab.chart import GrushinParams


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--q", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--count", type=int, default=6)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    prm = GrushinParams(args.p, args.q, args.alpha)
    rng = np.random.default_rng(args.seed)
    phi = cf.MapChain([cf.Inversion()], prm)
    for k in range(args.count):
        b = rng.uniform(-1, 1, prm.q)
        # every other sphere passes through the origin
        c = float(np.linalg.norm(b)) if k % 2 else float(rng.uniform(0.5, 2.0))
        fam = um.A1(b, c)
        img = [phi.apply(z) for z in um.sample_surface(fam, prm, 40, rng)]
        fit = um.family_classifier(None, img, prm)
        print(f"A1(b={np.round(b, 3)}, c={c:.3f}) -> {fit.family} residual {fit.residual:.1e}")


if __name__ == "__main__":
    main()
