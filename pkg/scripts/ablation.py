"""Sweep the number of generated samples per class in the fine-tune set.

Runs the full pipeline once, then re-runs only finetune, classify and
evaluate for each value; the trained GAN is reused because its stage hash
does not depend on the fine-tune set.

    python3 scripts/ablation.py --config configs/desk.cfg --values 0 50 100 200 --out out/ablation
"""
import argparse
import csv
import json
import sys
from pathlib import Path

from acegan import cli


def run(argv):
    code = cli.main(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--out", default="out/ablation")
    ap.add_argument("--values", type=int, nargs="+", default=[0, 50, 100, 200])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    base = ["--config", args.config, "--out", args.out, "--seed", str(args.seed)]
    if not (Path(args.out) / "gan" / "generator.tnet").exists():
        run(["run-all", "--synthetic"] + base)
    rows = []
    for n in args.values:
        over = base + ["--set", f"finetune_set.generated_per_class={n}"]
        for stage in ("finetune", "classify", "evaluate"):
            run([stage] + over)
        s = json.loads((Path(args.out) / "evaluate" / "summary.json").read_text())
        rows.append({"generated_per_class": n, "accuracy": s["accuracy"],
                     **{f"{c}_{k}": s[c][k] for c in ("SVEB", "VEB") for k in ("sen", "ppr", "f1")}})
        print(json.dumps(rows[-1]), flush=True)
    with open(Path(args.out) / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
