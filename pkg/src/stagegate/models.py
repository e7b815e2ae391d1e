"""The two neural classifiers over embedded messages, plus training glue.

CNN: conv(100 maps, 5x1, stride 2x1) -> maxpool(5x1) -> conv(200 maps, 3x1,
stride 2x1) -> maxpool(3x1) -> dropout(0.5) -> dense(200) -> softmax(4),
with batch normalization after each linear map and before its ReLU.
RNN: a single GRU cell (ReLU candidate activation) unrolled over the 100
word positions, softmax over the final hidden state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from stagegate.corpus import LABEL_INDEX, LABEL_ORDER, StageLabel
from stagegate.features import MAX_WORDS, EmbeddedMessage
from stagegate.nncore import (
    Adam,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    GruCell,
    MaxPool2d,
    NNError,
    ReLU,
    SGD,
    Sequential,
    ShapeMismatch,
    conv_output_size,
    softmax,
    softmax_xent,
)


class ModelError(NNError):
    pass


class FeatureWidthTooSmall(ModelError):
    pass


class EmptyData(ModelError):
    pass


class EmptySpace(ModelError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0
    early_stopping: bool = False
    optimizer: str = "adam"
    # global-norm gradient clip; BPTT through a ReLU GRU can blow up without it
    clip_grad_norm: Optional[float] = 5.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ModelError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ModelError(f"batch size must be >= 1, got {self.batch_size}")


class CnnClassifier:
    kind = "cnn"

    def __init__(self, feature_width: int, n_classes: int = 4, conv1_maps: int = 100,
                 conv2_maps: int = 200, dense_units: int = 200, dropout_rate: float = 0.5,
                 batchnorm: bool = True, seed: int = 0, dtype=np.float32):
        if feature_width < 3:
            raise FeatureWidthTooSmall(f"feature width must be >= 3, got {feature_width}")
        self.feature_width = feature_width
        self.n_classes = n_classes
        self.conv1_maps = conv1_maps
        self.conv2_maps = conv2_maps
        self.dense_units = dense_units
        self.dropout_rate = dropout_rate
        self.batchnorm = batchnorm
        self.seed = seed

        h1 = conv_output_size(MAX_WORDS, 5, 2)
        p1 = conv_output_size(h1, 5, 5)
        h2 = conv_output_size(p1, 3, 2)
        p2 = conv_output_size(h2, 3, 3)
        flat = conv2_maps * p2 * feature_width
        self._derived = (h1, p1, h2, p2, flat)

        rng = np.random.default_rng(seed)
        layers: list = []
        marks: list[tuple[int, str]] = []

        def mark(name):
            marks.append((len(layers) - 1, name))

        layers.append(Conv2d(1, conv1_maps, (5, 1), (2, 1), rng=rng, dtype=dtype)); mark("conv1")
        if batchnorm:
            layers.append(BatchNorm(conv1_maps, dtype=dtype))
        layers.append(ReLU())
        layers.append(MaxPool2d((5, 1))); mark("pool1")
        layers.append(Conv2d(conv1_maps, conv2_maps, (3, 1), (2, 1), rng=rng, dtype=dtype)); mark("conv2")
        if batchnorm:
            layers.append(BatchNorm(conv2_maps, dtype=dtype))
        layers.append(ReLU())
        layers.append(MaxPool2d((3, 1))); mark("pool2")
        layers.append(Dropout(dropout_rate, seed=seed + 1))
        layers.append(Flatten()); mark("flatten")
        layers.append(Dense(flat, dense_units, rng=rng, dtype=dtype)); mark("dense")
        if batchnorm:
            layers.append(BatchNorm(dense_units, dtype=dtype))
        layers.append(ReLU())
        layers.append(Dense(dense_units, n_classes, rng=rng, dtype=dtype)); mark("output")

        self.net = Sequential(layers)
        self._marks = marks

    @property
    def input_length(self) -> int:
        """Flattened input size: 100 word rows x feature width."""
        return MAX_WORDS * self.feature_width

    def shape_chain(self) -> list[tuple[str, tuple]]:
        """Statically derived (channels, height, width) after each named stage."""
        h1, p1, h2, p2, flat = self._derived
        w = self.feature_width
        return [
            ("input", (1, MAX_WORDS, w)),
            ("conv1", (self.conv1_maps, h1, w)),
            ("pool1", (self.conv1_maps, p1, w)),
            ("conv2", (self.conv2_maps, h2, w)),
            ("pool2", (self.conv2_maps, p2, w)),
            ("flatten", (flat,)),
            ("dense", (self.dense_units,)),
            ("output", (self.n_classes,)),
        ]

    def runtime_shapes(self, x: np.ndarray) -> list[tuple[str, tuple]]:
        """Observed per-stage tensor shapes (batch axis dropped) for one forward."""
        x = self._to_4d(x)
        seen = [("input", x.shape[1:])]
        names = dict(self._marks)
        for i, layer in enumerate(self.net.layers):
            x = layer.forward(x, training=False)
            if i in names:
                seen.append((names[i], x.shape[1:]))
        return seen

    def _to_4d(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[:, None, :, :]
        if x.ndim != 4 or x.shape[2] != MAX_WORDS or x.shape[3] != self.feature_width:
            raise ShapeMismatch(
                f"expected (N,{MAX_WORDS},{self.feature_width}) input, got {x.shape}"
            )
        return x

    def forward_batch(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.net.forward(self._to_4d(x), training=training)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.net.backward(dlogits)

    def zero_grads(self):
        self.net.zero_grads()

    def named_params(self):
        return self.net.named_params()

    def named_grads(self):
        return self.net.named_grads()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.named_params())
        for i, layer in enumerate(self.net.layers):
            if isinstance(layer, BatchNorm):
                out[f"{i}.running_mean"] = layer.running_mean
                out[f"{i}.running_var"] = layer.running_var
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        for i, layer in enumerate(self.net.layers):
            for k in layer.params:
                layer.params[k] = arrays[f"{i}.{k}"].astype(layer.params[k].dtype)
            if isinstance(layer, BatchNorm):
                layer.running_mean = arrays[f"{i}.running_mean"].astype(layer.running_mean.dtype)
                layer.running_var = arrays[f"{i}.running_var"].astype(layer.running_var.dtype)
        self.zero_grads()

    def arch_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_width": self.feature_width,
            "n_classes": self.n_classes,
            "conv1_maps": self.conv1_maps,
            "conv2_maps": self.conv2_maps,
            "dense_units": self.dense_units,
            "dropout_rate": self.dropout_rate,
            "batchnorm": self.batchnorm,
            "seed": self.seed,
        }


class RnnClassifier:
    kind = "rnn"

    # messages average well under 100 words, so the final-state readout must
    # survive a long zero-padded tail; a carry-biased update gate makes that
    # the starting regime instead of something training has to discover
    UPDATE_BIAS_INIT = -4.0

    def __init__(self, input_dim: int, hidden: int = 128, n_classes: int = 4,
                 activation: str = "relu", unroll: int = MAX_WORDS, seed: int = 0,
                 dtype=np.float32):
        if input_dim < 1 or hidden < 1:
            raise ModelError("input_dim and hidden must be >= 1")
        self.input_dim = input_dim
        self.hidden = hidden
        self.n_classes = n_classes
        self.activation = activation
        self.unroll = unroll
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.cell = GruCell(input_dim, hidden, activation=activation,
                            update_bias_init=self.UPDATE_BIAS_INIT, rng=rng, dtype=dtype)
        self.out = Dense(hidden, n_classes, rng=rng, dtype=dtype)
        self._caches: list = []

    def forward_batch(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.unroll or x.shape[2] != self.input_dim:
            raise ShapeMismatch(
                f"expected (N,{self.unroll},{self.input_dim}) input, got {x.shape}"
            )
        n = x.shape[0]
        h = np.zeros((n, self.hidden), dtype=x.dtype)
        self._caches = []
        for t in range(self.unroll):
            h, cache = self.cell.step(np.ascontiguousarray(x[:, t, :]), h)
            if training:
                self._caches.append(cache)
        return self.out.forward(h, training=training)

    def backward(self, dlogits: np.ndarray) -> None:
        dh = self.out.backward(dlogits)
        for cache in reversed(self._caches):
            _, dh = self.cell.backward_step(dh, cache)

    def zero_grads(self):
        self.cell.zero_grads()
        self.out.zero_grads()

    def named_params(self):
        out = {f"gru.{k}": v for k, v in self.cell.params.items()}
        out.update({f"out.{k}": v for k, v in self.out.params.items()})
        return out

    def named_grads(self):
        out = {f"gru.{k}": v for k, v in self.cell.grads.items()}
        out.update({f"out.{k}": v for k, v in self.out.grads.items()})
        return out

    def state_arrays(self):
        return dict(self.named_params())

    def load_state(self, arrays: dict[str, np.ndarray]):
        for k in self.cell.params:
            self.cell.params[k] = arrays[f"gru.{k}"].astype(self.cell.params[k].dtype)
        for k in self.out.params:
            self.out.params[k] = arrays[f"out.{k}"].astype(self.out.params[k].dtype)
        self.zero_grads()

    def arch_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "n_classes": self.n_classes,
            "activation": self.activation,
            "unroll": self.unroll,
            "seed": self.seed,
        }


Classifier = Union[CnnClassifier, RnnClassifier]


def build_cnn(feature_width: int, **kwargs) -> CnnClassifier:
    return CnnClassifier(feature_width, **kwargs)


def build_rnn(input_dim: int, hidden: int = 128, **kwargs) -> RnnClassifier:
    return RnnClassifier(input_dim, hidden=hidden, **kwargs)


def _stack_data(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 2:
        return np.asarray(data[0]), np.asarray(data[1])
    if not data:
        raise EmptyData("no training examples")
    xs, ys = [], []
    for em, lab in data:
        xs.append(em.matrix if isinstance(em, EmbeddedMessage) else np.asarray(em))
        ys.append(LABEL_INDEX[lab] if isinstance(lab, StageLabel) else int(lab))
    return np.stack(xs), np.array(ys, dtype=np.int64)


def train_model(model: Classifier, data, cfg: TrainConfig) -> list[float]:
    """Minibatch gradient descent; returns the per-epoch mean loss history."""
    x, y = _stack_data(data)
    if len(x) == 0:
        raise EmptyData("no training examples")
    if len(x) != len(y):
        raise ShapeMismatch(f"{len(x)} inputs vs {len(y)} labels")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.lr) if cfg.optimizer == "adam" else SGD(lr=cfg.lr)
    params = model.named_params()
    history: list[float] = []
    best = np.inf
    bad_epochs = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(x))
        total, seen = 0.0, 0
        for start in range(0, len(x), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            model.zero_grads()
            logits = model.forward_batch(x[idx], training=True)
            loss, dlogits = softmax_xent(logits, y[idx])
            model.backward(dlogits)
            grads = model.named_grads()
            if cfg.clip_grad_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
                if norm > cfg.clip_grad_norm:
                    scale = cfg.clip_grad_norm / norm
                    for g in grads.values():
                        g *= scale
            opt.step(params, grads)
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
        if cfg.early_stopping:
            if history[-1] < best - 1e-6:
                best, bad_epochs = history[-1], 0
            else:
                bad_epochs += 1
                if bad_epochs >= 3:
                    break
    return history


def predict_model(model: Classifier, em: EmbeddedMessage | np.ndarray,
                  labels: tuple[StageLabel, ...] = LABEL_ORDER) -> tuple[StageLabel, np.ndarray]:
    """Inference-mode prediction: (argmax label, the 4 class probabilities)."""
    x = em.matrix if isinstance(em, EmbeddedMessage) else np.asarray(em)
    logits = model.forward_batch(x[None], training=False)
    probs = softmax(logits.astype(np.float64))[0]
    return labels[int(np.argmax(probs))], probs


def predict_model_batch(model: Classifier, ems, labels=LABEL_ORDER,
                        batch_size: int = 100) -> list[StageLabel]:
    x = np.stack([em.matrix if isinstance(em, EmbeddedMessage) else np.asarray(em) for em in ems])
    out: list[StageLabel] = []
    for start in range(0, len(x), batch_size):
        logits = model.forward_batch(x[start : start + batch_size], training=False)
        out.extend(labels[int(i)] for i in np.argmax(logits, axis=1))
    return out


# --- random hyperparameter search ------------------------------------------------


def random_search(space: dict[str, tuple], trials: int, seed: int, objective) -> tuple[dict, list[dict]]:
    """Seeded random search over declared ranges; returns (best config, trial log).

    Range forms: ("uniform", lo, hi), ("log", lo, hi), ("int", lo, hi),
    ("choice", [options]). The objective is maximized.
    """
    if not space:
        raise EmptySpace("random_search requires a non-empty space")
    if trials < 1:
        raise ModelError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    log: list[dict] = []
    best_cfg, best_score = None, -np.inf
    for _ in range(trials):
        cfg = {}
        for name, spec in sorted(space.items()):
            kind = spec[0]
            if kind == "uniform":
                cfg[name] = float(rng.uniform(spec[1], spec[2]))
            elif kind == "log":
                cfg[name] = float(np.exp(rng.uniform(np.log(spec[1]), np.log(spec[2]))))
            elif kind == "int":
                cfg[name] = int(rng.integers(spec[1], spec[2] + 1))
            elif kind == "choice":
                cfg[name] = spec[1][int(rng.integers(0, len(spec[1])))]
            else:
                raise ModelError(f"unknown range kind: {kind!r}")
        score = float(objective(cfg))
        log.append({"config": cfg, "score": score})
        if score > best_score:
            best_cfg, best_score = cfg, score
    return best_cfg, log


# --- persistence -----------------------------------------------------------------
#
# Binary layout: magic line b"SGNN1\n", one JSON header line (architecture
# descriptor + ordered array manifest), then the raw little-endian float32
# array bytes in manifest order.

_MAGIC = b"SGNN1\n"


def save_model(model: Classifier, path: str | Path, meta: Optional[dict] = None) -> None:
    arrays = model.state_arrays()
    names = sorted(arrays)
    header = {
        "format": "stagegate-nn",
        "version": 1,
        "arch": model.arch_dict(),
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "meta": meta or {},
    }
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def load_model(path: str | Path) -> tuple[Classifier, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ModelError(f"{path}: not a stagegate network file")
    nl = raw.index(b"\n", len(_MAGIC))
    header = json.loads(raw[len(_MAGIC) : nl].decode("utf-8"))
    if header.get("version") != 1:
        raise ModelError(f"{path}: unsupported model version")
    arch = dict(header["arch"])
    kind = arch.pop("kind")
    if kind == "cnn":
        model: Classifier = CnnClassifier(**arch)
    elif kind == "rnn":
        model = RnnClassifier(**arch)
    else:
        raise ModelError(f"{path}: unknown architecture kind {kind!r}")
    off = nl + 1
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        off += 4 * count
    model.load_state(arrays)
    return model, header.get("meta", {})
