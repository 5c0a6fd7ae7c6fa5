"""Full 16-configuration sweep through the CLI, with optional smaller settings.

Usage: python3 scripts/run_sweep.py --out runs/sweep [--quick] [--workers 4]

--quick shrinks the synthetic data and epoch budgets so the sweep finishes in minutes.
"""

import argparse
import sys
import tempfile
from pathlib import Path

import yaml

from contact_sense.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--families", nargs="+", default=["gru", "lstm", "transformer"])
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    cfg = {
        "seed": args.seed,
        "paths": {"out_dir": args.out},
        "sweep": {"families": args.families, "workers": args.workers},
    }
    if args.quick:
        cfg["synthetic"] = {"num_train": 20, "num_val": 10}
        cfg["training"] = {"max_epochs": 10}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "sweep.yaml"
        path.write_text(yaml.safe_dump(cfg))
        for command in ("synth", "sweep"):
            code = cli_main([command, "--config", str(path)])
            if code:
                sys.exit(code)


if __name__ == "__main__":
    main()
