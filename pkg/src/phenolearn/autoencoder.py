"""Two-layer stacked sparse autoencoder over fixed-size series patches.

Each patch concatenates the predictive means and variances of a contiguous
window of an interpolated series. Encoders are sigmoid, decoders linear.
Training is greedy: encode1/decode1 on raw patches, then encode2/decode2
reconstructing raw patches through a frozen encode1, then joint fine-tuning
of encode1, encode2 and decode2.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, DivergedError

log = logging.getLogger(__name__)

MAGIC = b"PHENOAE1\n"


@dataclass
class TrainConfig:
    l1_activity: float = 1e-4
    l2_weight: float = 1e-3
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 64
    validation_fraction: float = 0.2
    seed: int = 0
    hidden: int = 100

    def __post_init__(self):
        if self.l1_activity < 0 or self.l2_weight < 0:
            raise ValueError("penalty weights must be >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and hidden >= 1 required")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "sigmoid"

    def __call__(self, x):
        z = x @ self.W.T + self.b
        return expit(z) if self.activation == "sigmoid" else z

    def copy(self):
        return DenseLayer(self.W.copy(), self.b.copy(), self.activation)


@dataclass
class StackedAutoencoder:
    encode1: DenseLayer
    encode2: DenseLayer
    decode2: DenseLayer
    config: TrainConfig = field(default_factory=TrainConfig)
    decode1: DenseLayer | None = None

    @property
    def input_dim(self):
        return self.encode1.W.shape[1]

    def reconstruct(self, x):
        return self.decode2(self.encode2(self.encode1(x)))


@dataclass(frozen=True)
class Patch:
    hadm_id: int
    offset: int
    x: np.ndarray


@dataclass(eq=False)
class PatchMatrix:
    X: np.ndarray
    hadm_ids: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray
    patch_len: int

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i):
        return Patch(int(self.hadm_ids[i]), int(self.offsets[i]), self.X[i])


def init_layer(fan_in, fan_out, activation, rng) -> DenseLayer:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    return DenseLayer(W, np.zeros(fan_out), activation)


def sample_patches(series_set, patch_len: int, n_patches: int, seed: int = 0) -> PatchMatrix:
    """Draw windows uniformly (with replacement) from every contiguous window.

    All valid (series, offset) pairs are pooled, so longer series contribute
    proportionally more patches. Series shorter than ``patch_len`` are skipped.
    """
    if patch_len < 1 or n_patches < 1:
        raise ValueError("patch_len and n_patches must be >= 1")
    usable = [s for s in series_set if len(s) >= patch_len]
    if len(usable) < len(series_set):
        log.info("skipped %d series shorter than %d samples",
                 len(series_set) - len(usable), patch_len)
    if not usable:
        raise DataError(f"no series has at least {patch_len} samples")
    windows = np.array([len(s) - patch_len + 1 for s in usable])
    ends = np.cumsum(windows)
    draws = np.random.default_rng(seed).integers(ends[-1], size=n_patches)
    which = np.searchsorted(ends, draws, side="right")
    offsets = draws - (ends[which] - windows[which])
    X = np.empty((n_patches, 2 * patch_len))
    for row, (k, off) in enumerate(zip(which, offsets)):
        s = usable[k]
        X[row, :patch_len] = s.means[off:off + patch_len]
        X[row, patch_len:] = s.variances[off:off + patch_len]
    return PatchMatrix(
        X=X,
        hadm_ids=np.array([usable[k].hadm_id for k in which], dtype=np.int64),
        labels=np.array([usable[k].label for k in which], dtype=np.int64),
        offsets=offsets.astype(np.int64),
        patch_len=patch_len,
    )


# Phase layouts: which parameters exist, which train, which activations and
# weights are penalized.
PHASES = {
    "layer1": dict(layers=("encode1", "decode1"), trainable=("encode1", "decode1"),
                   l1=("encode1",), l2=("encode1", "decode1")),
    "layer2": dict(layers=("encode1", "encode2", "decode2"), trainable=("encode2", "decode2"),
                   l1=("encode2",), l2=("encode2", "decode2")),
    "finetune": dict(layers=("encode1", "encode2", "decode2"),
                     trainable=("encode1", "encode2", "decode2"),
                     l1=("encode1", "encode2"), l2=("encode1", "encode2", "decode2")),
}


def loss_and_grad(layers: dict, x, phase: str, cfg: TrainConfig, need_grad=True):
    """Objective and gradients for the trainable layers of one phase.

    Objective: mean squared reconstruction error of ``x`` (averaged over
    samples and dimensions) + ``l1_activity`` * mean over samples of summed
    penalized activations + ``l2_weight`` * sum of squared penalized weights.
    Gradients are a dict ``{layer: (dW, db)}``.
    """
    spec = PHASES[phase]
    names = spec["layers"]
    n, D = x.shape
    acts = [x]
    for name in names:
        acts.append(layers[name](acts[-1]))
    xhat = acts[-1]
    resid = xhat - x
    loss = np.mean(resid * resid)
    for name in spec["l1"]:
        loss += cfg.l1_activity * np.abs(acts[names.index(name) + 1]).sum() / n
    for name in spec["l2"]:
        loss += cfg.l2_weight * np.sum(layers[name].W ** 2)
    if not need_grad:
        return float(loss), None

    grads = {}
    delta = 2.0 * resid / (n * D)
    first_trainable = min(names.index(t) for t in spec["trainable"])
    for i in range(len(names) - 1, first_trainable - 1, -1):
        name = names[i]
        layer = layers[name]
        out = acts[i + 1]
        if name in spec["l1"]:
            delta = delta + cfg.l1_activity * np.sign(out) / n
        if layer.activation == "sigmoid":
            delta = delta * out * (1.0 - out)
        dW = delta.T @ acts[i]
        if name in spec["l2"]:
            dW = dW + 2.0 * cfg.l2_weight * layer.W
        grads[name] = (dW, delta.sum(axis=0))
        if i > first_trainable:
            delta = delta @ layer.W
    return float(loss), grads


def _split(X, cfg: TrainConfig):
    n = len(X)
    n_val = int(round(cfg.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    order = np.random.default_rng([cfg.seed, 7]).permutation(n)
    return X[np.sort(order[n_val:])], X[np.sort(order[:n_val])]


def _train(layers, phase, X, cfg: TrainConfig, history=None, keep_best=False):
    spec = PHASES[phase]
    train, val = _split(np.asarray(X, dtype=np.float64), cfg)
    if len(train) == 0:
        raise DataError("no training patches")
    rng = np.random.default_rng([cfg.seed, list(PHASES).index(phase), 1])

    def epoch_losses():
        tl = loss_and_grad(layers, train, phase, cfg, need_grad=False)[0]
        vl = loss_and_grad(layers, val, phase, cfg, need_grad=False)[0] if len(val) else float("nan")
        return tl, vl

    best_loss, _ = losses = epoch_losses()
    best = {k: layers[k].copy() for k in spec["trainable"]}
    if history is not None:
        history.append(losses)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), cfg.batch_size):
            batch = train[order[start:start + cfg.batch_size]]
            _, grads = loss_and_grad(layers, batch, phase, cfg)
            for name, (dW, db) in grads.items():
                layers[name].W -= cfg.learning_rate * dW
                layers[name].b -= cfg.learning_rate * db
        losses = epoch_losses()
        if not np.isfinite(losses[0]):
            raise DivergedError(f"{phase}: loss became {losses[0]} at epoch {epoch + 1}; "
                                f"try a smaller learning_rate than {cfg.learning_rate}")
        if history is not None:
            history.append(losses)
        if losses[0] < best_loss:
            best_loss = losses[0]
            best = {k: layers[k].copy() for k in spec["trainable"]}
    if keep_best:
        for k, layer in best.items():
            layers[k] = layer
    return layers


def _as_matrix(patches):
    return patches.X if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)


def train_layer1(patches, cfg: TrainConfig = TrainConfig(), history=None):
    """Train encode1/decode1 to reconstruct raw patches. Returns (encode1, decode1)."""
    X = _as_matrix(patches)
    rng = np.random.default_rng([cfg.seed, 0])
    D = X.shape[1]
    layers = {"encode1": init_layer(D, cfg.hidden, "sigmoid", rng),
              "decode1": init_layer(cfg.hidden, D, "linear", rng)}
    _train(layers, "layer1", X, cfg, history)
    return layers["encode1"], layers["decode1"]


def train_layer2(patches, encode1: DenseLayer, cfg: TrainConfig = TrainConfig(), history=None):
    """Train encode2/decode2 on top of a frozen encode1. Returns (encode2, decode2)."""
    X = _as_matrix(patches)
    rng = np.random.default_rng([cfg.seed, 1])
    D = X.shape[1]
    layers = {"encode1": encode1,
              "encode2": init_layer(encode1.W.shape[0], cfg.hidden, "sigmoid", rng),
              "decode2": init_layer(cfg.hidden, D, "linear", rng)}
    _train(layers, "layer2", X, cfg, history)
    return layers["encode2"], layers["decode2"]


def fine_tune(patches, model: StackedAutoencoder, cfg: TrainConfig | None = None,
              history=None) -> StackedAutoencoder:
    """Jointly train encode1, encode2 and decode2; the best epoch on the train split wins."""
    cfg = cfg or model.config
    layers = {"encode1": model.encode1.copy(), "encode2": model.encode2.copy(),
              "decode2": model.decode2.copy()}
    _train(layers, "finetune", _as_matrix(patches), cfg, history, keep_best=True)
    return StackedAutoencoder(layers["encode1"], layers["encode2"], layers["decode2"],
                              cfg, model.decode1)


def train_stacked(patches, cfg: TrainConfig = TrainConfig(), history=None) -> StackedAutoencoder:
    """All three phases in order; ``history`` collects per-phase loss curves."""
    h = {"layer1": [], "layer2": [], "finetune": []}
    enc1, dec1 = train_layer1(patches, cfg, h["layer1"])
    enc2, dec2 = train_layer2(patches, enc1, cfg, h["layer2"])
    model = fine_tune(patches, StackedAutoencoder(enc1, enc2, dec2, cfg, dec1), cfg, h["finetune"])
    if history is not None:
        history.update(h)
    return model


def encode(model: StackedAutoencoder, patches, layer: int = 2) -> np.ndarray:
    X = _as_matrix(patches)
    h1 = model.encode1(X)
    if layer == 1:
        return h1
    if layer == 2:
        return model.encode2(h1)
    raise ValueError(f"layer must be 1 or 2, got {layer}")


def first_layer_signatures(model: StackedAutoencoder) -> np.ndarray:
    """Rows of encode1's weight matrix: one input-shaped signature per hidden unit."""
    return model.encode1.W.copy()


def _layer_items(model):
    names = ["encode1", "encode2", "decode2"] + (["decode1"] if model.decode1 is not None else [])
    return [(n, getattr(model, n)) for n in names]


def save_model(model: StackedAutoencoder, path):
    """JSON header line followed by little-endian float64 arrays in header order."""
    arrays, meta = [], []
    for name, layer in _layer_items(model):
        meta.append({"name": name, "activation": layer.activation,
                     "W": list(layer.W.shape), "b": list(layer.b.shape)})
        arrays += [layer.W, layer.b]
    header = json.dumps({"config": dataclasses.asdict(model.config), "layers": meta},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> StackedAutoencoder:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a serialized autoencoder")
        header = json.loads(fh.readline())
        layers = {}
        for m in header["layers"]:
            W = np.frombuffer(fh.read(8 * int(np.prod(m["W"]))), dtype="<f8").reshape(m["W"])
            b = np.frombuffer(fh.read(8 * int(np.prod(m["b"]))), dtype="<f8").reshape(m["b"])
            layers[m["name"]] = DenseLayer(W.astype(np.float64), b.astype(np.float64),
                                           m["activation"])
    return StackedAutoencoder(layers["encode1"], layers["encode2"], layers["decode2"],
                              TrainConfig(**header["config"]), layers.get("decode1"))
