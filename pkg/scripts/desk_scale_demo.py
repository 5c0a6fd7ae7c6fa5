"""Train every model family on the default synthetic data and print its validation report.

Each family uses its best reported preprocessing row and its default hyperparameters.
Usage: python3 scripts/desk_scale_demo.py [--out runs/demo] [--families gru lstm]
"""

import argparse
import json
import time
from pathlib import Path

from contact_sense import data_io, synthetic
from contact_sense.evaluation import score
from contact_sense.inference import VotingConfig, offline_classify
from contact_sense.models import default_spec
from contact_sense.preprocessing import PreprocessingParams, WindowMode, build_dataset
from contact_sense.training import default_train_config, make_split, train_final

BEST_ROWS = {  # offset ms, step samples, voting, N_p
    "gru": (50, 4, "hard", 15),
    "lstm": (5, 4, "hard", 8),
    "transformer": (15, 1, "hard", 15),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--families", nargs="+", default=list(BEST_ROWS), choices=list(BEST_ROWS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train = synthetic.generate(synthetic.train_config(args.seed))
    val = synthetic.generate(synthetic.val_config(args.seed + 1))
    out = Path(args.out)
    summary = {}
    for family in args.families:
        offset, step, method, n_p = BEST_ROWS[family]
        params = PreprocessingParams(WindowMode.SLIDING, offset, step)
        ds = build_dataset(train, params)
        start = time.perf_counter()
        state, curve = train_final(ds, make_split(ds, args.seed), default_spec(family),
                                   default_train_config(family, seed=args.seed),
                                   on_epoch=lambda rec: print(f"  {family} {rec.log_line()}", flush=True))
        seconds = time.perf_counter() - start
        res = offline_classify(val, state, params, VotingConfig(method=method, n_p=n_p))
        report = score([(r.label, lab) for r, _, lab in res], {"family": family, "dataset": params.label()})
        print(f"{family} {params.label()} {method} N_p={n_p} ({len(ds)} windows, {seconds:.0f} s)")
        print(report.to_text())
        run = out / f"{family}_{params.label()}"
        data_io.save_model(state, run / "model.bin")
        data_io.atomic_write_text(run / "report.csv", report.to_csv())
        summary[family] = {"accuracy": report.accuracy, "train_seconds": round(seconds, 1),
                           "best_epoch": state.meta["best_epoch"], "windows": len(ds)}
    data_io.atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
