"""Command-line entry point: ``generate``, ``train``, ``eval``, ``sweep``, ``gradcheck``.

Configuration is resolved as built-in defaults, then an optional flat
``key = value`` file (``--config``), then command-line flags. Every run logs
the resolved configuration and master seed, and every artifact embeds them.

Exit status: 0 success, 1 a validation failed (gradient check), 2 usage,
3 invalid configuration, 4 missing file, 5 unreadable or damaged file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import dataset, evaluation, models
from .chansim import ChannelConfig
from .errors import ConfigError, FormatError, ShapeError
from .evaluation import ExperimentConfig
from .models import Hyperparams, ModelKind
from .secrecy import TopologyConfig

log = logging.getLogger("mtlcsi")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_FORMAT = 0, 1, 2, 3, 4, 5

# key: (type, default); the keys double as config-file keys and flag names
OPTIONS = {
    "k": (int, 3),
    "n": (int, 2),
    "speed": (float, 10.0),
    "fc": (float, 2e9),
    "fs": (float, 1e3),
    "paths": (int, 100),
    "train_samples": (int, 50_000),
    "test_samples": (int, 150_000),
    "t_hist": (int, 10),
    "j_pred": (int, 1),
    "batch": (int, 500),
    "epochs": (int, 5),
    "hidden": (int, 200),
    "filters": (int, 50),
    "kernel": (int, 6),
    "weight": (float, 0.9),
    "snr_d_db": (float, 30.0),
    "snr_e_db": (float, 10.0),
    "seed": (int, 0),
    "model": (str, "lstm-j"),
    "out": (str, "runs"),
    "jobs": (int, 1),
}

# where and how widely a run executes; excluded from embedded configs so artifacts do not depend on it
PLACEMENT_KEYS = ("out", "jobs")

GRADCHECK_TOPOLOGY = TopologyConfig(2, 1)
GRADCHECK_HYPER = Hyperparams(batch_size=8, hidden_units=5, cnn_filters=3, cnn_kernel=2, t_hist=4, j_pred=1)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- configuration


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(file_values: dict, flag_values: dict) -> dict:
    """Merge defaults < file < flags, converting to each option's type."""
    resolved = {}
    for key, (typ, default) in OPTIONS.items():
        value = default
        if key in file_values:
            value = file_values[key]
        if flag_values.get(key) is not None:
            value = flag_values[key]
        try:
            resolved[key] = typ(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot read {value!r} as {typ.__name__}") from None
    return resolved


def embedded_config(r: dict) -> dict:
    return {k: v for k, v in r.items() if k not in PLACEMENT_KEYS}


def experiment_config(r: dict) -> ExperimentConfig:
    topo = TopologyConfig(r["k"], r["n"], r["snr_d_db"], r["snr_e_db"])
    chan = ChannelConfig(r["fc"], r["speed"], r["fs"], r["paths"], r["train_samples"], r["seed"])
    hyper = Hyperparams(
        r["weight"], r["batch"], r["epochs"], r["hidden"], r["filters"], r["kernel"],
        r["t_hist"], r["j_pred"], r["seed"],
    )
    return ExperimentConfig(topo, chan, hyper, r["test_samples"], r["seed"])


def _kinds(text: str) -> list[str]:
    try:
        return [ModelKind(k.strip()).value for k in text.split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"unknown model kind in {text!r}; choose from {[k.value for k in ModelKind]}") from None


# ---------------------------------------------------------------- commands


def _out_dir(r: dict) -> Path:
    out = Path(r["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args, r):
    cfg = experiment_config(r)
    out = _out_dir(r)
    splits = ("train", "test") if args.split == "both" else (args.split,)
    tr, te = evaluation.generate_data(cfg) if len(splits) == 2 else (None, None)
    for split in splits:
        if tr is not None:
            meta, windows = tr if split == "train" else te
        else:
            train_chan, test_chan, hyper = evaluation.resolve_seeds(cfg)
            chan = train_chan if split == "train" else test_chan
            meta, windows = dataset.generate_split(cfg.topology, chan, hyper.t_hist, hyper.j_pred, split)
        dataset.save_dataset(meta, windows, out / f"{split}.csiw")
        dataset.export_meta_csv(meta, out / f"{split}_meta.csv")
        log.info("wrote %s (%d windows)", out / f"{split}.csiw", meta.count)
    return EXIT_OK


def _load_data(path, topo: TopologyConfig):
    if not Path(path).is_file():
        raise FileNotFoundError(path)
    try:
        return dataset.load_dataset(path, expect=topo)
    except ShapeError as exc:
        raise ConfigError(f"dataset does not match the configured topology: {exc}") from None


def cmd_train(args, r):
    cfg = experiment_config(r)
    kind = ModelKind(_kinds(r["model"])[0])
    out = _out_dir(r)
    if args.data:
        meta, windows = _load_data(args.data, cfg.topology)
    else:
        (meta, windows), _ = evaluation.generate_data(cfg)
    hyper = evaluation.resolve_seeds(cfg)[2]
    if (meta.t_hist, meta.j_pred) != (hyper.t_hist, hyper.j_pred):
        raise ConfigError(f"dataset has T={meta.t_hist}, J={meta.j_pred}; configured T={hyper.t_hist}, J={hyper.j_pred}")
    model, history = models.train(kind, windows, cfg.topology, hyper)
    ckpt = out / f"{kind.value}.ckpt"
    models.save_checkpoint(model, ckpt, extra={"resolved": embedded_config(r), "dataset": dataset.meta_dict(meta)})
    hist_path = out / f"{kind.value}_history.csv"
    with open(hist_path, "w", newline="") as fh:
        fh.write(f"# config={json.dumps(embedded_config(r), sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "stage", "loss_mt", "loss_p", "loss_c", "lr", "wall_s"])
        w.writerows(history.rows())
    log.info("trained %s: %d iterations in %.2f s; wrote %s and %s", kind.value, len(history), history.train_time_s, ckpt, hist_path)
    return EXIT_OK


def cmd_eval(args, r):
    for p in (args.checkpoint, args.data):
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    model = models.load_checkpoint(args.checkpoint)
    try:
        meta, windows = dataset.load_dataset(args.data, expect=model.topology)
    except ShapeError as exc:
        raise ConfigError(f"checkpoint and dataset disagree: {exc}") from None
    if (meta.t_hist, meta.j_pred) != (model.hyper.t_hist, model.hyper.j_pred):
        raise ConfigError(
            f"checkpoint expects T={model.hyper.t_hist}, J={model.hyper.j_pred}; dataset has T={meta.t_hist}, J={meta.j_pred}"
        )
    report = evaluation.evaluate(model, windows)
    report.config = {"model": models.model_config(model), "dataset": dataset.meta_dict(meta), "seed": meta.seed}
    out = _out_dir(r)
    # wall-clock values go to their own file so metrics.csv is a pure function of the inputs
    metrics = report.metrics()
    timing = {k: metrics.pop(k) for k in evaluation.TIMING_COLUMNS}
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["model_kind", model.kind.value])
        w.writerow(["dataset_seed", meta.seed])
        for key, value in metrics.items():
            w.writerow([key, repr(value)])
        w.writerow(["config", json.dumps(report.config, sort_keys=True)])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "seconds"])
        w.writerows((k, repr(v)) for k, v in timing.items())
        w.writerow(["config", json.dumps(report.config, sort_keys=True)])
    log.info("metrics: %s", json.dumps(report.metrics()))
    print(json.dumps(report.metrics(), indent=2))
    return EXIT_OK


def cmd_sweep(args, r):
    cfg = experiment_config(r)
    grid = evaluation.DEFAULT_GRIDS[args.axis] if args.grid is None else [float(v) for v in args.grid.split(",")]
    kinds = _kinds(args.models)
    out = _out_dir(r)
    rows = evaluation.run_sweep(args.axis, grid, cfg, kinds, jobs=r["jobs"], out_dir=out)
    for row in rows:
        log.info("%s=%g %s nmse=%.4g acc=%.2f%%", args.axis, row.axis_value, row.model_kind, row.nmse, row.selection_accuracy_pct)
    return EXIT_OK


def cmd_gradcheck(args, r):
    kinds = _kinds(args.models)
    status = EXIT_OK
    windows = dataset.make_windows(
        dataset.build_scenario(GRADCHECK_TOPOLOGY, ChannelConfig(num_samples=20, seed=r["seed"])),
        GRADCHECK_HYPER.t_hist,
        GRADCHECK_HYPER.j_pred,
    )[: GRADCHECK_HYPER.batch_size]
    for kind in kinds:
        model = models.build_model(kind, GRADCHECK_TOPOLOGY, GRADCHECK_HYPER, seed=r["seed"])
        report = models.check_gradients(model, windows)
        print(f"{kind}: {report}")
        if not report.passed:
            status = EXIT_INVALID
    return status


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file, applied under the flags")
    for key, (typ, default) in OPTIONS.items():
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=str, default=None, metavar=typ.__name__.upper(),
                            help=f"default {default}")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="mtlcsi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("generate", parents=[common], help="build and save the train/test datasets")
    p.add_argument("--split", choices=("train", "test", "both"), default="both")
    p = sub.add_parser("train", parents=[common], help="train a model, write checkpoint and history")
    p.add_argument("--data", help="training dataset file (generated from the config when omitted)")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p = sub.add_parser("sweep", parents=[common], help="train and evaluate over a parameter grid")
    p.add_argument("--axis", choices=sorted(evaluation.AXES), required=True)
    p.add_argument("--grid", help="comma-separated values (default: the axis' standard grid)")
    p.add_argument("--models", default="lstm-j,cnn-j", help="comma-separated model kinds")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every architecture")
    p.add_argument("--models", default=",".join(k.value for k in ModelKind))
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        r = resolve(file_values, {k: getattr(args, k) for k in OPTIONS})
        experiment_config(r)
        log.info("resolved config: %s", json.dumps(r, sort_keys=True))
        log.info("master seed: %d", r["seed"])
        return COMMANDS[args.command](args, r)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ShapeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
