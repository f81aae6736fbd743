"""Reference collision rate of the default synthetic generator under the default driver.

Draws scenarios from the generator itself (not from a fitted estimator), so the
result is the ground truth that experiment estimates should approach.

    python3 scripts/calibrate_collision_rate.py --n 200000 --seed 0
"""

import argparse
import json
import math

import numpy as np

from scenario_risk.data import default_cutin_spec, generate_synthetic
from scenario_risk.sim import CutInSimulator


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="scenarios to simulate (default: %(default)s)")
    ap.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    ap.add_argument("--chunk", type=int, default=20_000, help="simulation batch size (default: %(default)s)")
    args = ap.parse_args()

    data, _ = generate_synthetic(default_cutin_spec(), args.n, np.random.default_rng(args.seed))
    sim = CutInSimulator()
    hits = sum(int(sim(data.rows[i:i + args.chunk]).collision.sum())
               for i in range(0, data.n, args.chunk))
    p = hits / data.n
    print(json.dumps({"n": data.n, "collisions": hits, "rate": p,
                      "se": math.sqrt(p * (1 - p) / data.n)}, indent=2))


if __name__ == "__main__":
    main()
