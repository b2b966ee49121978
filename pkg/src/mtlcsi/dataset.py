"""Windowed, labelled CSI datasets and their on-disk container.

A scenario is a ``D x S`` matrix of link magnitudes with ``D = K (1 + N)``:
rows ``0..K-1`` are the transmitter-to-destination links and the remaining
``K N`` rows are transmitter-to-eavesdropper links, transmitter index outer.
Windows slide over the columns with stride 1.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import chansim, secrecy
from .chansim import ChannelConfig
from .errors import CorruptFileError, DomainError, FormatError, ShapeError, VersionError
from .secrecy import TopologyConfig

MAGIC = b"CSIW1"
LAYOUT_VERSION = 1
SPLITS = ("train", "test")

# magic, version, K, N, T, J, count, seed, f_c, v, f_s, M,
# then split code, snr_d_db, snr_e_db, source length S
_HEADER = struct.Struct("<5sIIIIIQQdddIBddQ")


@dataclass
class CsiTensor:
    magnitudes: np.ndarray  # (D, S)
    topology: TopologyConfig

    def __post_init__(self):
        if self.magnitudes.ndim != 2 or self.magnitudes.shape[0] != self.topology.num_links:
            raise ShapeError(
                f"CSI tensor needs {self.topology.num_links} rows, got shape {self.magnitudes.shape}"
            )

    @property
    def num_samples(self) -> int:
        return self.magnitudes.shape[1]


@dataclass
class TrainingWindow:
    h_train: np.ndarray  # (D, T)
    h_target: np.ndarray  # (D, J)
    k_target: np.ndarray  # (J,) 1-based


@dataclass
class WindowSet:
    """All windows of one split, stacked on axis 0."""

    h_train: np.ndarray  # (n, D, T)
    h_target: np.ndarray  # (n, D, J)
    k_target: np.ndarray  # (n, J), 1-based transmitter indices

    def __len__(self) -> int:
        return self.h_train.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return TrainingWindow(self.h_train[i], self.h_target[i], self.k_target[i])
        return WindowSet(self.h_train[i], self.h_target[i], self.k_target[i])

    @property
    def num_links(self) -> int:
        return self.h_train.shape[1]

    @property
    def t_hist(self) -> int:
        return self.h_train.shape[2]

    @property
    def j_pred(self) -> int:
        return self.h_target.shape[2]


@dataclass(frozen=True)
class DatasetMeta:
    topology: TopologyConfig
    channel: ChannelConfig
    t_hist: int
    j_pred: int
    split: str
    seed: int
    count: int

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DomainError(f"split must be one of {SPLITS}, got {self.split!r}")
        expected = self.channel.num_samples - self.t_hist - self.j_pred + 1
        if self.count != expected:
            raise ShapeError(f"count {self.count} != S - T - J + 1 = {expected}")


def build_scenario(topo: TopologyConfig, chan: ChannelConfig, seed: int | None = None) -> CsiTensor:
    """Generate all ``K (1 + N)`` links as independent Clarke realizations.

    Link ``l`` draws its path angles from ``derive_seed(seed, l)``; ``seed``
    defaults to ``chan.seed``.
    """
    seed = chan.seed if seed is None else seed
    mags = np.empty((topo.num_links, chan.num_samples))
    for link in range(topo.num_links):
        mags[link] = np.abs(chansim.generate_envelope(chan, chansim.derive_seed(seed, link)))
    return CsiTensor(mags, topo)


def window_count(num_samples: int, t_hist: int, j_pred: int) -> int:
    return num_samples - t_hist - j_pred + 1


def make_windows(csi: CsiTensor, t_hist: int, j_pred: int) -> WindowSet:
    """Every stride-1 window of ``t_hist`` inputs followed by ``j_pred`` targets, labelled."""
    if t_hist < 1 or j_pred < 1:
        raise DomainError("t_hist and j_pred must be positive")
    S = csi.num_samples
    if S < t_hist + j_pred:
        raise DomainError(f"series of length {S} is shorter than T + J = {t_hist + j_pred}")
    n = window_count(S, t_hist, j_pred)
    view = sliding_window_view(csi.magnitudes, t_hist + j_pred, axis=1)[:, :n]  # (D, n, T+J)
    h_train = np.ascontiguousarray(view[:, :, :t_hist].transpose(1, 0, 2))
    h_target = np.ascontiguousarray(view[:, :, t_hist:].transpose(1, 0, 2))
    labels, _ = secrecy.select_transmitters(h_target.transpose(1, 0, 2), csi.topology)
    return WindowSet(h_train, h_target, labels.astype(np.int64))


def batch_iter(num_windows: int, batch_size: int, epoch_seed: int) -> Iterator[np.ndarray]:
    """Shuffled mini-batches of window indices; the final partial batch is dropped."""
    if batch_size < 1:
        raise DomainError("batch size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(num_windows)
    for start in range(0, num_windows - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def generate_split(
    topo: TopologyConfig, chan: ChannelConfig, t_hist: int, j_pred: int, split: str
) -> tuple[DatasetMeta, WindowSet]:
    """Build one split from ``chan`` (its seed and length) and label it."""
    windows = make_windows(build_scenario(topo, chan), t_hist, j_pred)
    meta = DatasetMeta(topo, chan, t_hist, j_pred, split, chan.seed, len(windows))
    return meta, windows


def _record_dtype(D: int, T: int, J: int) -> np.dtype:
    return np.dtype([("h_train", "<f8", (D, T)), ("h_target", "<f8", (D, J)), ("k_target", "<u4", (J,))])


def save_dataset(meta: DatasetMeta, windows: WindowSet, path: str | Path) -> None:
    """Write the versioned binary container.

    Layout: a packed little-endian header (see ``_HEADER``) followed by
    ``count`` fixed-size records, each holding ``h_train`` (row-major f64),
    ``h_target`` (row-major f64) and ``k_target`` (u32).
    """
    topo, chan = meta.topology, meta.channel
    D, T, J = topo.num_links, meta.t_hist, meta.j_pred
    if windows.h_train.shape != (meta.count, D, T) or windows.h_target.shape != (meta.count, D, J):
        raise ShapeError("windows do not match the metadata shapes")
    header = _HEADER.pack(
        MAGIC, LAYOUT_VERSION, topo.num_transmitters, topo.num_eavesdroppers, T, J,
        meta.count, meta.seed, chan.carrier_freq_hz, chan.speed_mps, chan.sampling_freq_hz,
        chan.num_paths, SPLITS.index(meta.split), topo.avg_snr_dest_db, topo.avg_snr_eaves_db,
        chan.num_samples,
    )
    records = np.empty(meta.count, dtype=_record_dtype(D, T, J))
    records["h_train"] = windows.h_train
    records["h_target"] = windows.h_target
    records["k_target"] = windows.k_target
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_dataset(path: str | Path, expect: TopologyConfig | None = None) -> tuple[DatasetMeta, WindowSet]:
    """Read a container written by :func:`save_dataset`.

    Raises :class:`FormatError` for a foreign file, :class:`VersionError` for
    an unknown layout, :class:`CorruptFileError` for truncation, and
    :class:`ShapeError` when ``expect`` names a different (K, N).
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a CSI window file (bad magic)")
    if len(data) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    (_, version, K, N, T, J, count, seed, fc, v, fs, M, split, snr_d, snr_e, S) = _HEADER.unpack_from(data)
    if version != LAYOUT_VERSION:
        raise VersionError(f"{path}: layout version {version}, this reader supports {LAYOUT_VERSION}")
    if split >= len(SPLITS):
        raise FormatError(f"{path}: unknown split code {split}")
    topo = TopologyConfig(K, N, snr_d, snr_e)
    if expect is not None and (expect.num_transmitters, expect.num_eavesdroppers) != (K, N):
        raise ShapeError(
            f"{path}: file holds K={K}, N={N}; expected K={expect.num_transmitters}, N={expect.num_eavesdroppers}"
        )
    chan = ChannelConfig(fc, v, fs, M, S, seed)
    try:
        meta = DatasetMeta(topo, chan, T, J, SPLITS[split], seed, count)
    except ShapeError as exc:
        raise CorruptFileError(f"{path}: inconsistent header: {exc}") from exc
    dtype = _record_dtype(topo.num_links, T, J)
    body = len(data) - _HEADER.size
    if body != count * dtype.itemsize:
        raise CorruptFileError(f"{path}: body holds {body} bytes, expected {count * dtype.itemsize}")
    records = np.frombuffer(data, dtype=dtype, offset=_HEADER.size)
    windows = WindowSet(
        records["h_train"].astype(np.float64),
        records["h_target"].astype(np.float64),
        records["k_target"].astype(np.int64),
    )
    return meta, windows


def meta_dict(meta: DatasetMeta) -> dict:
    out = {"split": meta.split, "t_hist": meta.t_hist, "j_pred": meta.j_pred, "seed": meta.seed, "count": meta.count}
    out.update({f"topology.{k}": val for k, val in asdict(meta.topology).items()})
    out.update({f"channel.{k}": val for k, val in asdict(meta.channel).items()})
    return out


def export_meta_csv(meta: DatasetMeta, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, val in meta_dict(meta).items():
            writer.writerow([key, repr(val) if isinstance(val, float) else val])
