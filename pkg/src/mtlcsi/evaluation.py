"""Held-out metrics, experiment runs and parameter sweeps.

Rates are averaged over every (window, step) pair. Sweep points regenerate
their data from seeds derived from the master seed, the sweep axis and the
point's position in the grid, so a point is reproducible on its own.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset, models, secrecy
from .chansim import ChannelConfig, derive_seed
from .dataset import WindowSet
from .errors import ConfigError, DomainError, ShapeError
from .models import Hyperparams, ModelKind
from .secrecy import TopologyConfig

AXES = {"weight": 1, "speed": 2, "transmitters": 3}
DEFAULT_GRIDS = {
    "weight": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "speed": (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0),
    "transmitters": (2, 3, 4, 5, 6),
}
SWEEP_COLUMNS = (
    "axis_value",
    "model_kind",
    "nmse",
    "selection_accuracy_pct",
    "predicted_esr",
    "realized_esr",
    "perfect_esr",
    "train_time_s",
    "test_time_s",
    "seed",
)
TIMING_COLUMNS = ("train_time_s", "test_time_s")


# ---------------------------------------------------------------- metrics


def _same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    if a.size == 0:
        raise DomainError(f"{what} of an empty set")


def nmse(preds, targets) -> float:
    """Total squared error energy over total target energy."""
    preds, targets = np.asarray(preds, dtype=float), np.asarray(targets, dtype=float)
    _same_shape(preds, targets, "nmse")
    den = float(np.sum(targets * targets))
    if den == 0.0:
        raise DomainError("nmse is undefined for all-zero targets")
    err = preds - targets
    return float(np.sum(err * err)) / den


def selection_accuracy(pred_idx, true_idx) -> float:
    pred_idx, true_idx = np.asarray(pred_idx), np.asarray(true_idx)
    _same_shape(pred_idx, true_idx, "selection accuracy")
    return 100.0 * np.count_nonzero(pred_idx == true_idx) / pred_idx.size


def _esr(csi, idx, topo: TopologyConfig) -> float:
    csi, idx = np.asarray(csi, dtype=float), np.asarray(idx)
    if csi.ndim != 3 or idx.shape != (csi.shape[0], csi.shape[2]):
        raise ShapeError(f"CSI {csi.shape} and indices {idx.shape} do not describe the same windows")
    if csi.shape[0] == 0:
        raise DomainError("ergodic secrecy rate of an empty set")
    return secrecy.ergodic_secrecy_rate(secrecy.rates_at(csi.transpose(1, 0, 2), idx, topo))


def predicted_esr(preds, pred_idx, topo: TopologyConfig) -> float:
    """ESR computed from predicted magnitudes at the predicted transmitter."""
    return _esr(preds, pred_idx, topo)


def realized_esr(targets, pred_idx, topo: TopologyConfig) -> float:
    """ESR actually delivered: true magnitudes at the predicted transmitter."""
    return _esr(targets, pred_idx, topo)


def perfect_esr(windows: WindowSet, topo: TopologyConfig) -> float:
    """ESR with perfect CSI and the secrecy-optimal transmitter."""
    return _esr(windows.h_target, windows.k_target, topo)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    nmse: float
    selection_accuracy_pct: float
    predicted_esr_bpcu: float
    realized_esr_bpcu: float
    perfect_esr_bpcu: float
    train_time_s: float
    test_time_s: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.selection_accuracy_pct <= 100.0:
            raise DomainError(f"accuracy {self.selection_accuracy_pct} outside [0, 100]")
        if self.nmse < 0 or min(self.predicted_esr_bpcu, self.realized_esr_bpcu, self.perfect_esr_bpcu) < 0:
            raise DomainError("nmse and rates must be non-negative")

    def metrics(self) -> dict:
        d = asdict(self)
        d.pop("config")
        return d


def evaluate(model: models.ModelParams, windows: WindowSet, train_time_s: float = math.nan) -> EvalReport:
    """Run inference over ``windows`` (timed) and compute every metric."""
    topo = model.topology
    start = time.perf_counter()
    pred = models.predict(model, windows.h_train)
    test_time = time.perf_counter() - start
    return EvalReport(
        nmse=nmse(pred.pred_csi, windows.h_target),
        selection_accuracy_pct=selection_accuracy(pred.pred_idx, windows.k_target),
        predicted_esr_bpcu=predicted_esr(pred.pred_csi, pred.pred_idx, topo),
        realized_esr_bpcu=realized_esr(windows.h_target, pred.pred_idx, topo),
        perfect_esr_bpcu=perfect_esr(windows, topo),
        train_time_s=train_time_s,
        test_time_s=test_time,
        config=models.model_config(model),
    )


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one train/test run depends on.

    ``channel.num_samples`` is the training series length; the test series
    uses the same channel with ``test_samples`` samples. ``seed`` is the
    master seed: the channel and hyperparameter seeds inside are ignored and
    re-derived from it by :func:`resolve_seeds`.
    """

    topology: TopologyConfig = field(default_factory=TopologyConfig)
    channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(num_samples=50_000))
    hyper: Hyperparams = field(default_factory=Hyperparams)
    test_samples: int = 150_000
    seed: int = 0

    def __post_init__(self):
        if self.test_samples < 1:
            raise ConfigError("test_samples must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_seeds(cfg: ExperimentConfig) -> tuple[ChannelConfig, ChannelConfig, Hyperparams]:
    """Train channel, test channel and hyperparameters with derived seeds."""
    train_chan = replace(cfg.channel, seed=derive_seed(cfg.seed, 1))
    test_chan = replace(cfg.channel, num_samples=cfg.test_samples, seed=derive_seed(cfg.seed, 2))
    return train_chan, test_chan, replace(cfg.hyper, seed=derive_seed(cfg.seed, 3))


def generate_data(cfg: ExperimentConfig):
    """``((train_meta, train_windows), (test_meta, test_windows))`` for ``cfg``."""
    train_chan, test_chan, hyper = resolve_seeds(cfg)
    tr = dataset.generate_split(cfg.topology, train_chan, hyper.t_hist, hyper.j_pred, "train")
    te = dataset.generate_split(cfg.topology, test_chan, hyper.t_hist, hyper.j_pred, "test")
    return tr, te


@dataclass
class SweepRow:
    axis_value: float
    model_kind: str
    nmse: float
    selection_accuracy_pct: float
    predicted_esr: float
    realized_esr: float
    perfect_esr: float
    train_time_s: float
    test_time_s: float
    seed: int

    @classmethod
    def from_report(cls, value, kind, report: EvalReport, seed: int) -> "SweepRow":
        return cls(
            value,
            ModelKind(kind).value,
            report.nmse,
            report.selection_accuracy_pct,
            report.predicted_esr_bpcu,
            report.realized_esr_bpcu,
            report.perfect_esr_bpcu,
            report.train_time_s,
            report.test_time_s,
            seed,
        )


def run_experiment(cfg: ExperimentConfig, kinds) -> tuple[list[EvalReport], dict]:
    """Generate data once, then train and evaluate each kind on it.

    Returns the reports (in ``kinds`` order) and per-phase wall-clock times.
    """
    start = time.perf_counter()
    (_, train_w), (_, test_w) = generate_data(cfg)
    phases = {"generate_s": time.perf_counter() - start}
    hyper = resolve_seeds(cfg)[2]
    reports = []
    for kind in kinds:
        kind = ModelKind(kind)
        model, history = models.train(kind, train_w, cfg.topology, hyper)
        report = evaluate(model, test_w, history.train_time_s)
        report.config = {"experiment": cfg.to_dict(), "model": models.model_config(model)}
        phases[f"{kind.value}.train_s"] = report.train_time_s
        phases[f"{kind.value}.test_s"] = report.test_time_s
        reports.append(report)
    return reports, phases


def point_config(axis: str, value, base: ExperimentConfig, index: int) -> ExperimentConfig:
    """``base`` moved to one grid point, with a seed derived for that point."""
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    if axis == "weight":
        cfg = replace(base, hyper=replace(base.hyper, weight=float(value)))
    elif axis == "speed":
        cfg = replace(base, channel=replace(base.channel, speed_mps=float(value)))
    else:
        if float(value) != int(value):
            raise ConfigError(f"transmitter count must be an integer, got {value}")
        cfg = replace(base, topology=replace(base.topology, num_transmitters=int(value)))
    return replace(cfg, seed=int(derive_seed(base.seed, AXES[axis], index)))


def _run_point(args):
    axis, value, base, index, kinds = args
    cfg = point_config(axis, value, base, index)
    reports, phases = run_experiment(cfg, kinds)
    rows = [SweepRow.from_report(value, k, r, cfg.seed) for k, r in zip(kinds, reports)]
    return rows, phases


def run_sweep(axis: str, grid, base: ExperimentConfig, kinds, jobs: int = 1, out_dir=None) -> list[SweepRow]:
    """Train and evaluate ``kinds`` at every grid point.

    Points run in separate processes when ``jobs > 1``; rows always come back
    in grid order. With ``out_dir`` set, each point's rows are written to
    ``point_<i>.json`` as soon as the point finishes, and ``sweep.csv`` plus
    ``summary.json`` are written at the end (all atomically).
    """
    grid = list(grid)
    kinds = [ModelKind(k).value for k in kinds]
    if not grid or not kinds:
        raise ConfigError("sweep needs a non-empty grid and at least one model kind")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    for i, v in enumerate(grid):
        point_config(axis, v, base, i)  # validate every point before any training
    tasks = [(axis, v, base, i, kinds) for i, v in enumerate(grid)]
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def done(i, result):
        if out_dir is not None:
            rows, phases = result
            payload = {"index": i, "rows": [asdict(r) for r in rows], "phases": phases}
            _atomic_write(out_dir / f"point_{i}.json", json.dumps(payload, indent=2))
        return result

    if jobs == 1:
        results = [done(i, _run_point(t)) for i, t in enumerate(tasks)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [done(i, r) for i, r in enumerate(pool.map(_run_point, tasks))]
    rows = [row for point_rows, _ in results for row in point_rows]
    if out_dir is not None:
        write_sweep_csv(rows, out_dir / "sweep.csv")
        summary = sweep_summary(axis, grid, base, kinds, rows, [p for _, p in results])
        _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2))
    return rows


def sweep_summary(axis, grid, base: ExperimentConfig, kinds, rows, phases) -> dict:
    per_kind = {}
    for k in kinds:
        sel = [r for r in rows if r.model_kind == k]
        per_kind[k] = {
            "nmse": [r.nmse for r in sel],
            "selection_accuracy_pct": [r.selection_accuracy_pct for r in sel],
            "predicted_esr": [r.predicted_esr for r in sel],
            "perfect_esr": [r.perfect_esr for r in sel],
        }
    return {
        "axis": axis,
        "grid": list(grid),
        "kinds": list(kinds),
        "base_config": base.to_dict(),
        "master_seed": base.seed,
        "per_kind": per_kind,
        "phases": phases,
    }


# ---------------------------------------------------------------- output


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def sweep_csv_text(rows) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def write_sweep_csv(rows, path) -> None:
    _atomic_write(Path(path), sweep_csv_text(rows))


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ShapeError(f"unexpected sweep header {reader.fieldnames}")
        return [
            SweepRow(
                float(d["axis_value"]),
                d["model_kind"],
                *(float(d[c]) for c in SWEEP_COLUMNS[2:-1]),
                int(d["seed"]),
            )
            for d in reader
        ]


def _fmt(v) -> str:
    # repr round-trips floats exactly
    return repr(float(v)) if isinstance(v, float) else str(v)
