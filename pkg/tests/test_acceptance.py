"""End-to-end acceptance checks at the reference settings.

The training-based criteria share module-scoped runs: one run of all four
kinds at K=3, N=2, v=10 m/s, and three sweeps (speed, transmitters, weight)
of the joint kinds. Expect roughly an hour and a half on one CPU core.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mtlcsi import chansim, cli, dataset, evaluation, models, netcore, secrecy
from mtlcsi.chansim import ChannelConfig
from mtlcsi.evaluation import ExperimentConfig
from mtlcsi.models import Hyperparams, ModelKind
from mtlcsi.secrecy import TopologyConfig

JOINT = ["lstm-j", "cnn-j"]


def record(log, key, passed, detail):
    log[key] = (bool(passed), detail)
    print(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


def trend_violations(values, direction):
    """Adjacent pairs breaking a non-decreasing (+1) or non-increasing (-1) trend."""
    return sum(1 for a, b in zip(values, values[1:]) if direction * (b - a) < 0)


def fmt(values, digits=4):
    return "[" + ", ".join(f"{v:.{digits}g}" for v in values) + "]"


# ---------------------------------------------------------------- shared runs


@pytest.fixture(scope="module")
def reference_run():
    """All four kinds trained and tested on one K=3, N=2, v=10 m/s dataset."""
    cfg = ExperimentConfig()
    (train_meta, train_w), (test_meta, test_w) = evaluation.generate_data(cfg)
    hyper = evaluation.resolve_seeds(cfg)[2]
    out = {"cfg": cfg, "train": (train_meta, train_w), "test": (test_meta, test_w), "models": {}, "reports": {}}
    for kind in ModelKind:
        model, history = models.train(kind, train_w, cfg.topology, hyper)
        out["models"][kind.value] = (model, history)
        out["reports"][kind.value] = evaluation.evaluate(model, test_w, history.train_time_s)
    return out


def _sweep(tmp_path_factory, axis, base):
    out = tmp_path_factory.mktemp(f"sweep_{axis}")
    rows = evaluation.run_sweep(axis, evaluation.DEFAULT_GRIDS[axis], base, JOINT, out_dir=out)
    return {k: [r for r in rows if r.model_kind == k] for k in JOINT}


@pytest.fixture(scope="module")
def speed_sweep(tmp_path_factory):
    base = ExperimentConfig(topology=TopologyConfig(4, 2))
    return _sweep(tmp_path_factory, "speed", base)


@pytest.fixture(scope="module")
def transmitter_sweep(tmp_path_factory):
    return _sweep(tmp_path_factory, "transmitters", ExperimentConfig())


@pytest.fixture(scope="module")
def weight_sweep(tmp_path_factory):
    return _sweep(tmp_path_factory, "weight", ExperimentConfig())


# ---------------------------------------------------------------- 1: channel statistics


def test_c1_channel_statistics(acceptance_log):
    start = time.perf_counter()
    cfg = ChannelConfig(num_samples=2_000)
    max_lag = int(math.floor(2 * cfg.coherence_time_s * cfg.sampling_freq_hz))
    acf = np.zeros(max_lag + 1)
    power = []
    realizations = 500
    for r in range(realizations):
        h = chansim.generate_envelope(cfg, chansim.derive_seed(2024, r))
        acf += chansim.empirical_autocorrelation(h, max_lag)
        power.append(np.abs(h) ** 2)
    acf /= realizations
    lags = np.arange(max_lag + 1) / cfg.sampling_freq_hz
    dev = float(np.max(np.abs(acf - chansim.theoretical_autocorrelation(cfg.doppler_hz, lags))))
    mean_power = float(np.mean(np.concatenate(power)))
    elapsed = time.perf_counter() - start
    passed = dev < 0.05 and abs(mean_power - 1) <= 0.01 and elapsed < 60
    record(
        acceptance_log, "1", passed,
        f"max |acf - J0| = {dev:.4f} over {max_lag + 1} lags (< 0.05); E|h|^2 = {mean_power:.5f} (1 +- 0.01); {elapsed:.1f} s",
    )


# ---------------------------------------------------------------- 2: gradient correctness


def test_c2_gradient_check_all_architectures(acceptance_log):
    start = time.perf_counter()
    topo = TopologyConfig(2, 1)
    hyper = Hyperparams(batch_size=8, hidden_units=5, cnn_filters=3, cnn_kernel=2, t_hist=4, j_pred=1)
    windows = dataset.make_windows(dataset.build_scenario(topo, ChannelConfig(num_samples=30, seed=1)), 4, 1)[:8]
    errors = {}
    for kind in ModelKind:
        errors[kind.value] = models.check_gradients(models.build_model(kind, topo, hyper, seed=0), windows).max_rel_error
    elapsed = time.perf_counter() - start
    passed = max(errors.values()) < 1e-5 and elapsed < 60
    detail = ", ".join(f"{k} {e:.2e}" for k, e in errors.items())
    record(acceptance_log, "2", passed, f"max relative error {detail} (< 1e-5); {elapsed:.1f} s")


# ---------------------------------------------------------------- 3: oracle equivalence


def _brute_force(column, K, N, snr_d, snr_e):
    best_k, best_val = 0, -math.inf
    for k in range(K):
        gd = snr_d * column[k] ** 2
        ge = snr_e * sum(column[K + k * N + n] ** 2 for n in range(N))
        val = (1 + gd) / (1 + ge)
        if val > best_val:
            best_k, best_val = k, val
    return best_k + 1


def test_c3_selection_matches_brute_force(acceptance_log):
    rng = np.random.default_rng(31337)
    mismatches = 0
    trials = 10_000
    for t in range(trials):
        K, N = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        topo = TopologyConfig(K, N, float(rng.uniform(-5, 40)), float(rng.uniform(-5, 40)))
        col = rng.rayleigh(scale=math.sqrt(0.5), size=topo.num_links)
        if t % 10 == 0:
            col[:K] = col[0]  # force exact ties among destination links
            col[K:] = col[K]
        if secrecy.select_transmitter(col, topo).index != _brute_force(col.tolist(), K, N, topo.snr_dest, topo.snr_eaves):
            mismatches += 1
    record(acceptance_log, "3", mismatches == 0, f"{mismatches} mismatches in {trials} randomized columns")


# ---------------------------------------------------------------- 4: dataset counts


def test_c4_dataset_counts(acceptance_log, reference_run):
    (train_meta, train_w), (test_meta, test_w) = reference_run["train"], reference_run["test"]
    counts = (len(train_w), train_meta.count, len(test_w), test_meta.count)
    passed = counts == (49_990, 49_990, 149_990, 149_990)
    record(acceptance_log, "4", passed, f"train windows {counts[0]} (49990), test windows {counts[2]} (149990)")


# ---------------------------------------------------------------- 5: learning rate


def test_c5_learning_rate_schedule(acceptance_log):
    lr0, lr200 = netcore.lr_at(0), netcore.lr_at(200)
    passed = lr0 == 0.005 and abs(lr200 - 0.0025) <= 1e-12
    record(acceptance_log, "5", passed, f"lr_at(0) = {lr0!r}, lr_at(200) = {lr200!r}")


# ---------------------------------------------------------------- 6: learning beats chance


def test_c6_lstm_j_beats_chance(acceptance_log, reference_run):
    rep = reference_run["reports"]["lstm-j"]
    passed = rep.selection_accuracy_pct > 100 / 3 + 15 and rep.nmse < 0.5
    record(
        acceptance_log, "6", passed,
        f"LSTM-J held-out accuracy {rep.selection_accuracy_pct:.2f}% (> 48.33%), NMSE {rep.nmse:.4g} (< 0.5)",
    )


def test_training_loss_decreases_in_most_windows(reference_run):
    _, history = reference_run["models"]["lstm-j"]
    mt = np.array(history.loss_mt)
    assert len(mt) == 495
    blocks = mt[: len(mt) // 10 * 10].reshape(-1, 10).mean(axis=1)
    decreasing = int(np.sum(np.diff(blocks) < 0))
    assert decreasing > (len(blocks) - 1) / 2, f"{decreasing} of {len(blocks) - 1} block-to-block steps decrease"


# ---------------------------------------------------------------- 7: trends


def test_c7a_nmse_grows_with_speed(acceptance_log, speed_sweep):
    parts, passed = [], True
    for k in JOINT:
        nmse = [r.nmse for r in speed_sweep[k]]
        bad = trend_violations(nmse, +1)
        passed &= bad <= 1
        parts.append(f"{k} NMSE {fmt(nmse)} ({bad} violations)")
    record(acceptance_log, "7a", passed, "; ".join(parts))


def test_c7b_accuracy_falls_with_speed(acceptance_log, speed_sweep):
    parts, passed = [], True
    for k in JOINT:
        acc = [r.selection_accuracy_pct for r in speed_sweep[k]]
        bad = trend_violations(acc, -1)
        passed &= bad <= 1
        parts.append(f"{k} accuracy {fmt(acc)} ({bad} violations)")
    record(acceptance_log, "7b", passed, "; ".join(parts))


def test_c7c_lstm_beats_cnn_at_every_speed(acceptance_log, speed_sweep):
    pairs = list(zip(speed_sweep["lstm-j"], speed_sweep["cnn-j"]))
    bad = [a.axis_value for a, b in pairs if not a.nmse < b.nmse]
    record(acceptance_log, "7c", len(bad) <= 1, f"LSTM-J NMSE >= CNN-J NMSE at speeds {bad} (at most one allowed)")


def test_c7d_nmse_flat_in_transmitters(acceptance_log, transmitter_sweep):
    parts, passed = [], True
    for k in JOINT:
        nmse = np.array([r.nmse for r in transmitter_sweep[k]])
        spread = float((nmse.max() - nmse.min()) / nmse.mean())
        passed &= spread < 0.25
        parts.append(f"{k} NMSE {fmt(nmse)} spread {100 * spread:.1f}% of mean")
    acc = [r.selection_accuracy_pct for r in transmitter_sweep["lstm-j"]]
    parts.append(f"lstm-j accuracy {fmt(acc)}")
    record(acceptance_log, "7d", passed, "; ".join(parts))


def test_accuracy_falls_with_transmitters(transmitter_sweep):
    for k in JOINT:
        acc = [r.selection_accuracy_pct for r in transmitter_sweep[k]]
        assert trend_violations(acc, -1) <= 1, f"{k}: {acc}"


def test_c7e_high_weight_predicts_better(acceptance_log, weight_sweep):
    parts, passed = [], True
    for k in JOINT:
        nmse = [r.nmse for r in weight_sweep[k]]
        passed &= nmse[-1] <= nmse[0]
        parts.append(f"{k} NMSE w=0.1 {nmse[0]:.4g}, w=0.9 {nmse[-1]:.4g}")
    record(acceptance_log, "7e", passed, "; ".join(parts))


# ---------------------------------------------------------------- 8: timing


def test_c8_training_time_ratios(acceptance_log, reference_run):
    t = {k: h.train_time_s for k, (_, h) in reference_run["models"].items()}
    lstm_ratio = t["lstm-j"] / t["lstm-s"]
    cnn_ratio = t["cnn-j"] / t["cnn-s"]
    passed = 0.45 <= lstm_ratio <= 0.75 and cnn_ratio < 1
    detail = (
        f"LSTM-J/LSTM-S = {t['lstm-j']:.1f}/{t['lstm-s']:.1f} s = {lstm_ratio:.3f} (in [0.45, 0.75]); "
        f"CNN-J/CNN-S = {t['cnn-j']:.2f}/{t['cnn-s']:.2f} s = {cnn_ratio:.3f} (< 1)"
    )
    record(acceptance_log, "8", passed, detail)


# ---------------------------------------------------------------- 9: ESR consistency


def _oracle_esr(csi, idx, topo):
    K, N = topo.num_transmitters, topo.num_eavesdroppers
    rates = []
    for s in range(csi.shape[0]):
        for j in range(csi.shape[2]):
            k = int(idx[s, j]) - 1
            col = csi[s, :, j]
            g_d = secrecy.snr_dest(float(col[k]), topo.snr_dest)
            g_e = secrecy.snr_eaves_mrc(col[K + k * N : K + (k + 1) * N], topo.snr_eaves)
            rates.append(float(secrecy.secrecy_rate(g_d, g_e)))
    return math.fsum(rates) / len(rates)


def test_c9_esr_consistency(acceptance_log, reference_run, speed_sweep, transmitter_sweep, weight_sweep):
    topo = reference_run["cfg"].topology
    _, test_w = reference_run["test"]
    model, _ = reference_run["models"]["lstm-j"]
    pred = models.predict(model, test_w.h_train)
    gap = abs(evaluation.predicted_esr(pred.pred_csi, pred.pred_idx, topo) - _oracle_esr(pred.pred_csi, pred.pred_idx, topo))
    rows = [r for sweep in (speed_sweep, transmitter_sweep, weight_sweep) for rs in sweep.values() for r in rs]
    reports = list(reference_run["reports"].values())
    dominated = all(r.perfect_esr_bpcu >= r.realized_esr_bpcu for r in reports) and all(
        r.perfect_esr >= r.realized_esr for r in rows
    )
    passed = gap < 1e-12 and dominated
    record(
        acceptance_log, "9", passed,
        f"|predicted ESR - recomputation| = {gap:.2e} (< 1e-12); perfect >= realized on all {len(reports) + len(rows)} evaluations: {dominated}",
    )


# ---------------------------------------------------------------- 10: reproducibility

REPRO_FLAGS = [
    "--train-samples", "3000", "--test-samples", "2000", "--batch", "100", "--epochs", "2",
    "--hidden", "16", "--filters", "8", "--kernel", "4", "--seed", "77",
]


def _pipeline(root: Path):
    assert cli.main(["generate", "--out", str(root / "data")] + REPRO_FLAGS) == 0
    for kind in ModelKind:
        out = root / kind.value
        assert cli.main(["train", "--model", kind.value, "--data", str(root / "data" / "train.csiw"), "--out", str(out)] + REPRO_FLAGS) == 0
        assert cli.main(["eval", "--checkpoint", str(out / f"{kind.value}.ckpt"), "--data", str(root / "data" / "test.csiw"), "--out", str(out)]) == 0
    assert cli.main(["sweep", "--axis", "speed", "--grid", "5,30", "--models", "lstm-j,cnn-s", "--out", str(root / "sweep")] + REPRO_FLAGS) == 0


def _sweep_without_timing(path: Path):
    header, *rows = [line.split(",") for line in path.read_text().splitlines()]
    keep = [i for i, c in enumerate(header) if c not in evaluation.TIMING_COLUMNS]
    return [[r[i] for i in keep] for r in [header] + rows]


def test_c10_reproducibility(acceptance_log, tmp_path):
    _pipeline(tmp_path / "a")
    _pipeline(tmp_path / "b")
    files = ["data/train.csiw", "data/test.csiw"]
    files += [f"{k.value}/{k.value}.ckpt" for k in ModelKind] + [f"{k.value}/metrics.csv" for k in ModelKind]
    differing = [f for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    sweep_same = _sweep_without_timing(tmp_path / "a" / "sweep" / "sweep.csv") == _sweep_without_timing(tmp_path / "b" / "sweep" / "sweep.csv")
    passed = not differing and sweep_same
    record(
        acceptance_log, "10", passed,
        f"{len(files) - len(differing)}/{len(files)} dataset, checkpoint and metrics files bit-identical; "
        f"sweep CSV identical outside wall-clock columns: {sweep_same}",
    )
