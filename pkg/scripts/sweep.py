"""Run one of the reference sweeps and write sweep.csv, summary.json and per-point files.

    python3 scripts/sweep.py speed --out results/speed
    python3 scripts/sweep.py weight --out results/weight --kinds lstm-j,cnn-j,lstm-s
"""

import argparse
import logging
from dataclasses import replace

from mtlcsi import evaluation
from mtlcsi.evaluation import ExperimentConfig
from mtlcsi.secrecy import TopologyConfig

# the speed sweep runs at four transmitters, the others at three
BASES = {
    "weight": ExperimentConfig(),
    "speed": ExperimentConfig(topology=TopologyConfig(4, 2)),
    "transmitters": ExperimentConfig(),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("axis", choices=sorted(BASES))
    ap.add_argument("--out", required=True)
    ap.add_argument("--kinds", default="lstm-j,cnn-j")
    ap.add_argument("--grid", help="comma-separated override of the default grid")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = replace(BASES[args.axis], seed=args.seed)
    grid = evaluation.DEFAULT_GRIDS[args.axis] if args.grid is None else [float(v) for v in args.grid.split(",")]
    rows = evaluation.run_sweep(args.axis, grid, base, args.kinds.split(","), jobs=args.jobs, out_dir=args.out)
    print(f"{args.axis:>12} {'model':>7} {'nmse':>9} {'acc %':>7} {'pred ESR':>9} {'real ESR':>9} {'perf ESR':>9} {'train s':>8}")
    for r in rows:
        print(
            f"{r.axis_value:>12g} {r.model_kind:>7} {r.nmse:>9.4g} {r.selection_accuracy_pct:>7.2f} "
            f"{r.predicted_esr:>9.4f} {r.realized_esr:>9.4f} {r.perfect_esr:>9.4f} {r.train_time_s:>8.1f}"
        )


if __name__ == "__main__":
    main()
