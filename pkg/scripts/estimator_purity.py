"""Purity of the unsupervised normal-beat pool on a synthetic cohort.

    python3 scripts/estimator_purity.py --records 4 --beats 600
    python3 scripts/estimator_purity.py --fractions "N: 0.86, S: 0.04, V: 0.1"
"""
import argparse
import json

from acegan.config import parse_config
from acegan.experiments import estimator_purity


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--records", type=int, default=4)
    ap.add_argument("--beats", type=int, default=600, help="beats per record")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fractions", default="N: 0.9, V: 0.1", help="class mix, e.g. 'N: 0.9, V: 0.1'")
    args = ap.parse_args()
    res = estimator_purity(args.records, args.beats, args.seed, fractions=parse_config(f"synth.fractions = {args.fractions}").synth.fractions)
    print(json.dumps({"purity": res.purity, "total_beats": res.total_beats, "pool_sizes": res.pool_sizes,
                      "available_normals": res.available_normals, "seconds": round(res.seconds, 1)}, indent=2))


if __name__ == "__main__":
    main()
