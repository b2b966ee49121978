"""Joint (multi-task) and sequential CSI-prediction / transmitter-selection models.

Every network is one encoder (an LSTM read out at its last step, or the
conv stack) feeding affine heads:

* ``csi`` head: ``D * J`` predicted magnitudes,
* ``cls`` head: ``K * J`` logits, softmax per future step.

Joint kinds (``lstm-j``, ``cnn-j``) hold one network with both heads and are
trained on ``w * L_p + (1 - w) * L_c``. Sequential kinds (``lstm-s``,
``cnn-s``) hold a CSI network trained on ``L_p`` and then a selection network
trained on ``L_c`` whose input is the history followed by the frozen CSI
network's prediction (length ``T + J``).
"""

from __future__ import annotations

import enum
import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import netcore as nc
from . import secrecy
from .chansim import derive_seed
from .dataset import WindowSet, batch_iter
from .errors import ConfigError, CorruptFileError, FormatError, ShapeError, VersionError
from .secrecy import TopologyConfig

# inference chunk; bounds the LSTM activation cache to roughly 100 MB at H=200
PREDICT_CHUNK = 2000


class ModelKind(str, enum.Enum):
    LSTM_J = "lstm-j"
    LSTM_S = "lstm-s"
    CNN_J = "cnn-j"
    CNN_S = "cnn-s"

    @property
    def encoder(self) -> str:
        return "lstm" if self in (ModelKind.LSTM_J, ModelKind.LSTM_S) else "cnn"

    @property
    def joint(self) -> bool:
        return self in (ModelKind.LSTM_J, ModelKind.CNN_J)

    @property
    def tag(self) -> int:
        return list(ModelKind).index(self)


@dataclass(frozen=True)
class Hyperparams:
    weight: float = 0.9
    batch_size: int = 500
    epochs: int = 5
    hidden_units: int = 200
    cnn_filters: int = 50
    cnn_kernel: int = 6
    t_hist: int = 10
    j_pred: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.weight < 1.0:
            raise ConfigError(f"loss weight must lie in (0, 1), got {self.weight}")
        for name in ("batch_size", "epochs", "hidden_units", "cnn_filters", "cnn_kernel", "t_hist", "j_pred"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


# ---------------------------------------------------------------- networks


@dataclass
class Network:
    encoder: str  # "lstm" or "cnn"
    heads: tuple  # subset of ("csi", "cls"), in that order
    num_links: int
    num_classes: int
    j_pred: int
    params: dict = field(default_factory=dict)

    def _lstm(self):
        p = self.params
        return nc.LstmParams(p["enc.W"], p["enc.U"], p["enc.b"])

    def _conv(self):
        p = self.params
        return nc.Conv1dParams(p["enc.filters"], p["enc.bias"], p["enc.gain"], p["enc.offset"])

    def _dense(self, head):
        return nc.DenseParams(self.params[f"{head}.W"], self.params[f"{head}.b"])

    def forward(self, x: np.ndarray):
        """``x`` is (B, D, L) with links on axis 1 and time on axis 2."""
        if x.ndim != 3 or x.shape[1] != self.num_links:
            raise ShapeError(f"network expects (B, {self.num_links}, L) input, got {x.shape}")
        B = x.shape[0]
        if self.encoder == "lstm":
            _, feat, _, enc_cache = nc.lstm_forward(self._lstm(), x.transpose(0, 2, 1))
        else:
            feat, enc_cache = nc.conv1d_stack_forward(self._conv(), x)
        out, head_caches = {}, {}
        if "csi" in self.heads:
            y, head_caches["csi"] = nc.fc_forward(self._dense("csi"), feat)
            out["csi"] = y.reshape(B, self.num_links, self.j_pred)
        if "cls" in self.heads:
            y, head_caches["cls"] = nc.fc_forward(self._dense("cls"), feat)
            out["logits"] = y.reshape(B, self.j_pred, self.num_classes)
        return out, (enc_cache, head_caches, feat.shape)

    def backward(self, cache, d_out: dict) -> dict:
        enc_cache, head_caches, feat_shape = cache
        grads = {}
        dfeat = np.zeros(feat_shape)
        for head, key in (("csi", "csi"), ("cls", "logits")):
            if head not in self.heads:
                continue
            dy = d_out[key].reshape(feat_shape[0], -1)
            g, dx = nc.fc_backward(self._dense(head), head_caches[head], dy)
            grads[f"{head}.W"], grads[f"{head}.b"] = g.W, g.b
            dfeat += dx
        if self.encoder == "lstm":
            g, _, _, _ = nc.lstm_backward(enc_cache, dh_last=dfeat, need_dx=False)
            grads.update({"enc.W": g.W, "enc.U": g.U, "enc.b": g.b})
        else:
            g, _ = nc.conv1d_stack_backward(enc_cache, dfeat)
            grads.update({"enc.filters": g.filters, "enc.bias": g.bias, "enc.gain": g.gain, "enc.offset": g.offset})
        return {k: grads[k] for k in self.params}


def _init_network(encoder, heads, topo: TopologyConfig, hyper: Hyperparams, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    D, K, J = topo.num_links, topo.num_transmitters, hyper.j_pred
    net = Network(encoder, tuple(heads), D, K, J)
    if encoder == "lstm":
        p = nc.init_lstm(rng, D, hyper.hidden_units)
        net.params.update({"enc.W": p.W, "enc.U": p.U, "enc.b": p.b})
        width = hyper.hidden_units
    else:
        p = nc.init_conv1d(rng, D, hyper.cnn_filters, hyper.cnn_kernel)
        net.params.update({"enc.filters": p.filters, "enc.bias": p.bias, "enc.gain": p.gain, "enc.offset": p.offset})
        width = hyper.cnn_filters
    if "csi" in heads:
        d = nc.init_dense(rng, width, D * J)
        net.params.update({"csi.W": d.W, "csi.b": d.b})
    if "cls" in heads:
        d = nc.init_dense(rng, width, K * J)
        net.params.update({"cls.W": d.W, "cls.b": d.b})
    return net


@dataclass
class ModelParams:
    kind: ModelKind
    topology: TopologyConfig
    hyper: Hyperparams
    networks: list  # one Network for joint kinds, (csi net, selection net) for sequential

    def blocks(self) -> dict:
        return {f"net{i}.{k}": a for i, net in enumerate(self.networks) for k, a in net.params.items()}

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.blocks().values())


def build_model(kind, topo: TopologyConfig, hyper: Hyperparams, seed: int | None = None) -> ModelParams:
    """Deterministically initialised parameters for ``kind``; ``seed`` defaults to ``hyper.seed``."""
    kind = ModelKind(kind)
    seed = hyper.seed if seed is None else seed
    if kind.encoder == "cnn" and hyper.cnn_kernel > hyper.t_hist:
        raise ConfigError(f"cnn_kernel={hyper.cnn_kernel} exceeds t_hist={hyper.t_hist}")
    if kind.joint:
        nets = [_init_network(kind.encoder, ("csi", "cls"), topo, hyper, derive_seed(seed, 0))]
    else:
        nets = [
            _init_network(kind.encoder, ("csi",), topo, hyper, derive_seed(seed, 0)),
            _init_network(kind.encoder, ("cls",), topo, hyper, derive_seed(seed, 1)),
        ]
    return ModelParams(kind, topo, hyper, nets)


# ---------------------------------------------------------------- losses


def csi_loss(pred: np.ndarray, target: np.ndarray):
    """Squared error summed over the batch, divided by ``J K (N + 1)``.

    ``pred`` and ``target`` are (B, D, J). Returns ``(loss, dloss/dpred)``.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} disagree")
    _, D, J = pred.shape
    err = pred - target
    scale = 1.0 / (J * D)
    return scale * float(np.sum(err * err)), (2.0 * scale) * err


def class_loss(logits: np.ndarray, target_idx: np.ndarray):
    """Batch-summed cross-entropy; ``target_idx`` holds 1-based transmitter indices."""
    if logits.shape[-1] == 1:
        # a single transmitter is always right; nothing to learn
        return 0.0, np.ones_like(logits), np.zeros_like(logits)
    return nc.softmax_cross_entropy(logits, np.asarray(target_idx) - 1)


@dataclass
class MultiTaskLoss:
    total: float
    csi: float
    cls: float
    d_csi: np.ndarray
    d_logits: np.ndarray
    probs: np.ndarray


def multi_task_loss(pred_csi, target_csi, logits, target_idx, weight: float) -> MultiTaskLoss:
    """``w L_p + (1 - w) L_c`` and its gradients with respect to the head outputs.

    Classification enters as logits (B, J, K); the returned ``probs`` are
    their per-step softmax.
    """
    if not 0.0 < weight < 1.0:
        raise ConfigError(f"loss weight must lie in (0, 1), got {weight}")
    if logits.shape[:2] != np.shape(target_idx) or logits.shape[0] != pred_csi.shape[0]:
        raise ShapeError("classification outputs and targets disagree with the batch")
    lp, dp = csi_loss(pred_csi, target_csi)
    lc, probs, dl = class_loss(logits, target_idx)
    total = weight * lp + (1.0 - weight) * lc
    return MultiTaskLoss(total, lp, lc, weight * dp, (1.0 - weight) * dl, probs)


# ---------------------------------------------------------------- training


@dataclass
class TrainHistory:
    stage: list = field(default_factory=list)
    loss_mt: list = field(default_factory=list)
    loss_p: list = field(default_factory=list)
    loss_c: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_s: list = field(default_factory=list)
    train_time_s: float = 0.0

    def record(self, stage, mt, lp, lc, lr, wall):
        self.stage.append(stage)
        self.loss_mt.append(mt)
        self.loss_p.append(lp)
        self.loss_c.append(lc)
        self.lr.append(lr)
        self.wall_s.append(wall)

    def __len__(self) -> int:
        return len(self.stage)

    def rows(self):
        for i in range(len(self)):
            yield i, self.stage[i], self.loss_mt[i], self.loss_p[i], self.loss_c[i], self.lr[i], self.wall_s[i]


def _sequence_input(h_train: np.ndarray, pred_csi: np.ndarray) -> np.ndarray:
    return np.concatenate([h_train, pred_csi], axis=2)


def _check_data(model: ModelParams, windows: WindowSet):
    D = model.topology.num_links
    h = model.hyper
    if (windows.num_links, windows.t_hist, windows.j_pred) != (D, h.t_hist, h.j_pred):
        raise ShapeError(
            f"dataset windows are (D={windows.num_links}, T={windows.t_hist}, J={windows.j_pred}); "
            f"model expects (D={D}, T={h.t_hist}, J={h.j_pred})"
        )
    if len(windows) < h.batch_size:
        raise ShapeError(f"{len(windows)} windows cannot fill one batch of {h.batch_size}")


def _fit(net: Network, inputs, windows: WindowSet, hyper: Hyperparams, stage: int, objective: str, history):
    """One optimisation run of ``net``; ``objective`` is "joint", "csi" or "cls"."""
    state = nc.AdamState()
    n_iter = 0
    w = hyper.weight
    for epoch in range(hyper.epochs):
        for idx in batch_iter(len(windows), hyper.batch_size, derive_seed(hyper.seed, 100 + stage, epoch)):
            t0 = time.perf_counter()
            out, cache = net.forward(inputs[idx])
            if objective == "joint":
                loss = multi_task_loss(out["csi"], windows.h_target[idx], out["logits"], windows.k_target[idx], w)
                d_out = {"csi": loss.d_csi, "logits": loss.d_logits}
                row = (loss.total, loss.csi, loss.cls)
            elif objective == "csi":
                lp, dp = csi_loss(out["csi"], windows.h_target[idx])
                d_out = {"csi": dp}
                row = (float("nan"), lp, float("nan"))
            else:
                lc, _, dl = class_loss(out["logits"], windows.k_target[idx])
                d_out = {"logits": dl}
                row = (float("nan"), float("nan"), lc)
            lr = nc.lr_at(n_iter)
            nc.adam_step(state, net.params, net.backward(cache, d_out), lr)
            history.record(stage, *row, lr, time.perf_counter() - t0)
            n_iter += 1


def train(kind, windows: WindowSet, topo: TopologyConfig, hyper: Hyperparams):
    """Train a freshly initialised model; returns ``(ModelParams, TrainHistory)``.

    ``history.train_time_s`` is the monotonic wall-clock of the whole
    procedure, including the sequential kinds' stage-1 inference over the
    training set.
    """
    model = build_model(kind, topo, hyper)
    _check_data(model, windows)
    history = TrainHistory()
    start = time.perf_counter()
    if model.kind.joint:
        _fit(model.networks[0], windows.h_train, windows, hyper, 0, "joint", history)
    else:
        net1, net2 = model.networks
        _fit(net1, windows.h_train, windows, hyper, 1, "csi", history)
        pred1 = _predict_csi(net1, windows.h_train)
        _fit(net2, _sequence_input(windows.h_train, pred1), windows, hyper, 2, "cls", history)
    history.train_time_s = time.perf_counter() - start
    return model, history


# ---------------------------------------------------------------- inference


@dataclass
class Prediction:
    pred_csi: np.ndarray  # (n, D, J)
    pred_idx: np.ndarray  # (n, J), 1-based
    class_probs: np.ndarray  # (n, J, K)


def _chunks(n: int):
    for start in range(0, n, PREDICT_CHUNK):
        yield slice(start, min(start + PREDICT_CHUNK, n))


def _predict_csi(net: Network, h: np.ndarray) -> np.ndarray:
    out = np.empty((h.shape[0], net.num_links, net.j_pred))
    for sl in _chunks(h.shape[0]):
        out[sl] = net.forward(h[sl])[0]["csi"]
    return out


def _predict_logits(net: Network, x: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], net.j_pred, net.num_classes))
    for sl in _chunks(x.shape[0]):
        out[sl] = net.forward(x[sl])[0]["logits"]
    return out


def predict(model: ModelParams, h_train: np.ndarray, selector: str = "network") -> Prediction:
    """Predict future magnitudes and selected transmitters from history.

    ``h_train`` is (D, T) or (n, D, T). With ``selector="oracle"`` the
    selection network is bypassed and the index comes from the closed-form
    secrecy-optimal rule applied to the predicted magnitudes (diagnostic).
    """
    h = np.asarray(h_train, dtype=float)
    single = h.ndim == 2
    if single:
        h = h[None]
    D, T = model.topology.num_links, model.hyper.t_hist
    if h.ndim != 3 or h.shape[1:] != (D, T):
        raise ShapeError(f"expected history of shape (n, {D}, {T}), got {h.shape}")
    if selector not in ("network", "oracle"):
        raise ConfigError(f"unknown selector {selector!r}")
    if model.kind.joint:
        net = model.networks[0]
        pred_csi = np.empty((h.shape[0], D, model.hyper.j_pred))
        logits = np.empty((h.shape[0], model.hyper.j_pred, model.topology.num_transmitters))
        for sl in _chunks(h.shape[0]):
            out, _ = net.forward(h[sl])
            pred_csi[sl], logits[sl] = out["csi"], out["logits"]
    else:
        pred_csi = _predict_csi(model.networks[0], h)
        logits = None if selector == "oracle" else _predict_logits(model.networks[1], _sequence_input(h, pred_csi))
    if selector == "oracle":
        idx, _ = secrecy.select_transmitters(pred_csi.transpose(1, 0, 2), model.topology)
        probs = np.zeros(idx.shape + (model.topology.num_transmitters,))
        np.put_along_axis(probs, (idx - 1)[..., None], 1.0, axis=-1)
    else:
        probs = nc.softmax(logits, axis=-1)
        idx = np.argmax(probs, axis=-1) + 1
    result = Prediction(pred_csi, idx, probs)
    if single:
        result = Prediction(pred_csi[0], idx[0], probs[0])
    return result


# ---------------------------------------------------------------- gradient check


def model_loss_and_grads(model: ModelParams, windows: WindowSet):
    """Closure over a fixed batch giving the training objective of every network.

    Joint kinds use ``L_mt``. Sequential kinds use ``w L_p`` on the CSI
    network plus ``(1 - w) L_c`` on the selection network, whose input is the
    CSI network's prediction computed once and held fixed.
    """
    w = model.hyper.weight
    frozen = None
    if not model.kind.joint:
        frozen = _sequence_input(windows.h_train, _predict_csi(model.networks[0], windows.h_train))

    def fn(blocks: dict):
        for i, net in enumerate(model.networks):
            for k in net.params:
                net.params[k] = blocks[f"net{i}.{k}"]
        grads = {}
        if model.kind.joint:
            net = model.networks[0]
            out, cache = net.forward(windows.h_train)
            loss = multi_task_loss(out["csi"], windows.h_target, out["logits"], windows.k_target, w)
            g = net.backward(cache, {"csi": loss.d_csi, "logits": loss.d_logits})
            grads.update({f"net0.{k}": v for k, v in g.items()})
            return loss.total, grads
        net1, net2 = model.networks
        out1, c1 = net1.forward(windows.h_train)
        lp, dp = csi_loss(out1["csi"], windows.h_target)
        out2, c2 = net2.forward(frozen)
        lc, _, dl = class_loss(out2["logits"], windows.k_target)
        grads.update({f"net0.{k}": v for k, v in net1.backward(c1, {"csi": w * dp}).items()})
        grads.update({f"net1.{k}": v for k, v in net2.backward(c2, {"logits": (1 - w) * dl}).items()})
        return w * lp + (1 - w) * lc, grads

    return fn


def check_gradients(model: ModelParams, windows: WindowSet, tolerance: float = 1e-5, step: float = 1e-5):
    return nc.gradient_check(model_loss_and_grads(model, windows), model.blocks(), tolerance, step)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MTLC1"
CKPT_VERSION = 1
# magic, version, arch tag, K, N, T, J, H, F, W_k
_CKPT_HEADER = struct.Struct("<5sIIIIIIIII")


def model_config(model: ModelParams) -> dict:
    return {"kind": model.kind.value, "topology": asdict(model.topology), "hyper": asdict(model.hyper)}


def save_checkpoint(model: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    """Write a versioned checkpoint.

    Layout (little-endian): fixed header ``_CKPT_HEADER``; u32 length + UTF-8
    JSON of the resolved configuration; u32 block count; per block a u16
    name length, the name, a u8 rank, u32 dims and the float64 values in C
    order; finally a CRC32 of everything before it. Blocks follow network
    order, then encoder, CSI head, selection head.
    """
    h, topo = model.hyper, model.topology
    parts = [
        _CKPT_HEADER.pack(
            CKPT_MAGIC, CKPT_VERSION, model.kind.tag, topo.num_transmitters, topo.num_eavesdroppers,
            h.t_hist, h.j_pred, h.hidden_units, h.cnn_filters, h.cnn_kernel,
        )
    ]
    config = model_config(model)
    if extra:
        config["extra"] = extra
    blob = json.dumps(config, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)) + blob)
    blocks = model.blocks()
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(parts)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path: str | Path, expect_kind=None, expect_topology: TopologyConfig | None = None) -> ModelParams:
    data = Path(path).read_bytes()
    if data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    if len(data) < _CKPT_HEADER.size + 4:
        raise CorruptFileError(f"{path}: truncated checkpoint")
    _, version, tag, K, N, T, J, H, F, Wk = _CKPT_HEADER.unpack_from(data)
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this reader supports {CKPT_VERSION}")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptFileError(f"{path}: checksum mismatch (truncated or damaged)")
    if tag >= len(ModelKind):
        raise FormatError(f"{path}: unknown architecture tag {tag}")
    kind = list(ModelKind)[tag]
    if expect_kind is not None and ModelKind(expect_kind) != kind:
        raise ShapeError(f"{path}: holds a {kind.value} model, not {ModelKind(expect_kind).value}")
    if expect_topology is not None and (expect_topology.num_transmitters, expect_topology.num_eavesdroppers) != (K, N):
        raise ShapeError(
            f"{path}: model is for K={K}, N={N}; expected K={expect_topology.num_transmitters}, "
            f"N={expect_topology.num_eavesdroppers}"
        )
    pos = _CKPT_HEADER.size
    (n,) = struct.unpack_from("<I", data, pos)
    config = json.loads(data[pos + 4 : pos + 4 + n])
    pos += 4 + n
    topo = TopologyConfig(**config["topology"])
    hyper = Hyperparams(**config["hyper"])
    if (topo.num_transmitters, topo.num_eavesdroppers, hyper.t_hist, hyper.j_pred) != (K, N, T, J):
        raise CorruptFileError(f"{path}: header and embedded configuration disagree")
    model = build_model(kind, topo, hyper)
    expected = model.blocks()
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if count != len(expected):
        raise ShapeError(f"{path}: {count} parameter blocks, architecture needs {len(expected)}")
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, pos)
        name = data[pos + 2 : pos + 2 + ln].decode()
        pos += 2 + ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
        pos += 1 + 4 * ndim
        if name not in expected or expected[name].shape != tuple(shape):
            raise ShapeError(f"{path}: block {name} with shape {shape} does not fit a {kind.value} model")
        size = int(np.prod(shape)) * 8
        expected[name][...] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape)
        pos += size
    if pos != len(payload):
        raise CorruptFileError(f"{path}: trailing bytes after parameter blocks")
    return model
