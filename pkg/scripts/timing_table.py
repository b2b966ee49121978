"""Train all four model kinds on the reference dataset and tabulate training/testing time.

Also prints each kind's held-out metrics. Writes timing.csv to --out.
"""

import argparse
import csv
from pathlib import Path

from mtlcsi import evaluation, models
from mtlcsi.evaluation import ExperimentConfig
from mtlcsi.models import ModelKind


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/timing")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = ExperimentConfig(seed=args.seed)
    (_, train_w), (_, test_w) = evaluation.generate_data(cfg)
    hyper = evaluation.resolve_seeds(cfg)[2]
    reports = {}
    for kind in ModelKind:
        model, history = models.train(kind, train_w, cfg.topology, hyper)
        reports[kind.value] = evaluation.evaluate(model, test_w, history.train_time_s)
        print(f"{kind.value}: done", flush=True)

    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_kind", "train_time_s", "test_time_s", "nmse", "selection_accuracy_pct", "predicted_esr", "perfect_esr"])
        for k, r in reports.items():
            w.writerow([k, r.train_time_s, r.test_time_s, r.nmse, r.selection_accuracy_pct, r.predicted_esr_bpcu, r.perfect_esr_bpcu])

    print(f"{'model':>7} {'train s':>9} {'test s':>8} {'nmse':>9} {'acc %':>7}")
    for k, r in reports.items():
        print(f"{k:>7} {r.train_time_s:>9.1f} {r.test_time_s:>8.2f} {r.nmse:>9.4g} {r.selection_accuracy_pct:>7.2f}")
    for enc in ("lstm", "cnn"):
        j, s = reports[f"{enc}-j"].train_time_s, reports[f"{enc}-s"].train_time_s
        print(f"{enc}: joint/sequential training time = {j / s:.3f} ({100 * (1 - j / s):.1f}% saving)")


if __name__ == "__main__":
    main()
