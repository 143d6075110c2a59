"""GAN smoke training on a synthetic four-class coupling-matrix pool.

    python scripts/gan_smoke.py --iterations 2000 --batch-size 16 --out out/gan_smoke
"""
import argparse
import json
import logging
from pathlib import Path

from acegan import gan
from acegan.experiments import gan_smoke, synthetic_training_pool


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--telemetry-every", type=int, default=100)
    ap.add_argument("--fd-samples", type=int, default=100, help="per class")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/gan_smoke")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    pool = synthetic_training_pool(seed=args.seed)
    cfg = gan.GanTrainConfig(iterations=args.iterations, batch_size=args.batch_size,
                             telemetry_every=args.telemetry_every, fd_samples_per_class=args.fd_samples,
                             seed=args.seed)
    res = gan_smoke(pool, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gan.write_telemetry(out / "telemetry.csv", res.telemetry)
    summary = {"seconds": round(res.seconds, 1), "final_accuracy": res.final_accuracy,
               "fd_first5": res.fd_first, "fd_last5": res.fd_last, "pool": pool.counts()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
