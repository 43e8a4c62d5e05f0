"""Facial-image module: a small DenseNet classifier and its training callback.

Architecture (no batch normalization, no dropout)::

    3x3 conv (pad 1)
    -> [dense block -> transition] x (blocks - 1)
    -> dense block -> global average pool -> fully connected (2 logits)

A dense-block layer is ReLU followed by a 3x3 conv producing ``growth``
channels, concatenated onto the block's running stack. A transition is a
1x1 conv that compresses the channel count, then 2x2 average pooling.
Class index 1 is ASD.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields

import numpy as np

from hybridx.numerics import layers
from hybridx.numerics.rng import derive_seed, make_rng
from hybridx.records import DatasetStats, ImageSample, Label

MODEL_HEADER = "HYBRIDX-DENSENET v1"
_PROB_EPS = 1e-15
_SHUFFLE_OFFSET = 1


@dataclass(frozen=True)
class DenseNetConfig:
    side: int = 16
    initial_channels: int = 8
    blocks: int = 2
    layers_per_block: int = 2
    growth: int = 4
    compression: float = 0.5
    lr: float = 0.05
    epochs: int = 30
    patience: int = 3
    decay: float = 0.5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("side", "initial_channels", "blocks", "layers_per_block", "growth",
                     "epochs", "patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError(f"compression must lie in (0, 1], got {self.compression}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.side % (2 ** (self.blocks - 1)):
            raise ValueError(
                f"side {self.side} is not divisible by 2^(blocks-1) = {2 ** (self.blocks - 1)}"
            )


def param_shapes(cfg: DenseNetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in the fixed order used for serialization."""
    shapes = {"stem.w": (cfg.initial_channels, 3, 3, 3), "stem.b": (cfg.initial_channels,)}
    channels = cfg.initial_channels
    for blk in range(cfg.blocks):
        for layer in range(cfg.layers_per_block):
            shapes[f"block{blk}.layer{layer}.w"] = (cfg.growth, channels, 3, 3)
            shapes[f"block{blk}.layer{layer}.b"] = (cfg.growth,)
            channels += cfg.growth
        if blk < cfg.blocks - 1:
            out = max(1, int(math.floor(cfg.compression * channels)))
            shapes[f"trans{blk}.w"] = (out, channels, 1, 1)
            shapes[f"trans{blk}.b"] = (out,)
            channels = out
    shapes["fc.w"] = (2, channels)
    shapes["fc.b"] = (2,)
    return shapes


def feature_channels(cfg: DenseNetConfig) -> int:
    """Number of channels entering global average pooling."""
    return param_shapes(cfg)["fc.w"][1]


@dataclass(eq=False)
class DenseNetModel:
    config: DenseNetConfig
    params: dict[str, np.ndarray]
    seed: int
    n_asd: int = 0
    n_non_asd: int = 0

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def build_model(cfg: DenseNetConfig) -> DenseNetModel:
    """He-initialized weights from the config seed; all biases zero."""
    rng = make_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
    return DenseNetModel(cfg, params, cfg.seed)


def _forward(params, cfg, x):
    cache = {"input": x, "layers": [], "transitions": []}
    h = layers.conv2d_forward(x, params["stem.w"], params["stem.b"], 1, 1)
    for blk in range(cfg.blocks):
        for layer in range(cfg.layers_per_block):
            name = f"block{blk}.layer{layer}"
            r = layers.relu_forward(h)
            y = layers.conv2d_forward(r, params[f"{name}.w"], params[f"{name}.b"], 1, 1)
            cache["layers"].append((name, h, r))
            h = layers.concat_channels_forward([h, y])
        if blk < cfg.blocks - 1:
            t = layers.conv2d_forward(h, params[f"trans{blk}.w"], params[f"trans{blk}.b"], 1, 0)
            cache["transitions"].append((blk, h, t))
            h = layers.avgpool2x2_forward(t)
    feats = layers.global_avg_pool_forward(h)
    cache["gap_in"] = h
    cache["feats"] = feats
    return layers.dense_forward(feats, params["fc.w"], params["fc.b"]), cache


def _backward(params, cfg, cache, grad_logits):
    grads = {}
    g_feats, grads["fc.w"], grads["fc.b"] = layers.dense_backward(
        grad_logits, cache["feats"], params["fc.w"])
    g = layers.global_avg_pool_backward(g_feats, cache["gap_in"])

    block_layers = list(cache["layers"])
    transitions = {blk: (h_in, t) for blk, h_in, t in cache["transitions"]}
    for blk in reversed(range(cfg.blocks)):
        if blk in transitions:
            h_in, t = transitions[blk]
            g_t = layers.avgpool2x2_backward(g, t)
            g, grads[f"trans{blk}.w"], grads[f"trans{blk}.b"] = layers.conv2d_backward(
                g_t, h_in, params[f"trans{blk}.w"], 1, 0)
        for _ in range(cfg.layers_per_block):
            name, h_in, r = block_layers.pop()
            g_h, g_y = layers.concat_channels_backward(g, [h_in.shape[1], cfg.growth])
            g_r, grads[f"{name}.w"], grads[f"{name}.b"] = layers.conv2d_backward(
                g_y, r, params[f"{name}.w"], 1, 1)
            g = g_h + layers.relu_backward(g_r, h_in)

    g_x, grads["stem.w"], grads["stem.b"] = layers.conv2d_backward(
        g, cache["input"], params["stem.w"], 1, 1)
    ordered = {name: grads[name] for name in params}
    ordered["input"] = g_x
    return ordered


def loss_and_grads(params, cfg, x, labels, need_grads=True):
    """Mean softmax cross-entropy over a batch ``x`` of shape (N, 3, side, side).

    Returns ``(loss, grads, cache)``; ``grads`` maps every parameter name,
    plus ``"input"``, to its gradient (``None`` when ``need_grads`` is false).
    """
    logits, cache = _forward(params, cfg, x)
    loss, g_logits = layers.softmax_crossentropy(logits, labels)
    grads = _backward(params, cfg, cache, g_logits) if need_grads else None
    return loss, grads, cache


def relu_pattern(cache) -> bytes:
    """Sign pattern of every ReLU input in a forward cache (for kink detection)."""
    return b"".join(np.packbits(h > 0).tobytes() for _, h, _ in cache["layers"])


def _stack(images, side) -> np.ndarray:
    if isinstance(images, np.ndarray):
        x = images if images.ndim == 4 else images[None]
    else:
        x = np.stack([img.pixels for img in images]) if images else np.zeros((0, 3, side, side))
    if x.shape[1:] != (3, side, side):
        raise ValueError(f"model expects images of shape {(3, side, side)}, got {x.shape[1:]}")
    return np.asarray(x, dtype=np.float64)


def forward(model: DenseNetModel, batch) -> np.ndarray:
    """Logits of shape (N, 2) for a list of ImageSample or an (N, 3, S, S) array."""
    x = _stack(batch, model.config.side)
    logits, _ = _forward(model.params, model.config, x)
    return logits


def predict_proba_batch(model: DenseNetModel, batch) -> np.ndarray:
    p = layers.softmax(forward(model, batch))[:, Label.ASD]
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


def predict_proba(model: DenseNetModel, image) -> float:
    """Probability of the ASD class for one image (ImageSample or (3, S, S) array)."""
    pixels = image.pixels if isinstance(image, ImageSample) else image
    return float(predict_proba_batch(model, pixels[None])[0])


def _accuracy(params, cfg, x, y, batch_size=256) -> float:
    hits = 0
    for start in range(0, len(x), batch_size):
        logits, _ = _forward(params, cfg, x[start:start + batch_size])
        pred = (layers.softmax(logits)[:, Label.ASD] >= 0.5).astype(int)
        hits += int(np.sum(pred == y[start:start + batch_size]))
    return hits / len(x)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_accuracy: float
    lr: float


@dataclass
class CallbackState:
    """Reduce-on-plateau plus best-weights snapshot."""

    lr: float
    best_accuracy: float = -math.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int = 0
    since_improvement: int = 0

    def end_epoch(self, epoch, val_accuracy, params, patience, decay):
        if val_accuracy > self.best_accuracy:
            self.best_accuracy = val_accuracy
            self.best_params = {k: v.copy() for k, v in params.items()}
            self.best_epoch = epoch
            self.since_improvement = 0
            return
        self.since_improvement += 1
        if self.since_improvement >= patience:
            self.lr *= decay
            self.since_improvement = 0


def fit_with_callback(model: DenseNetModel, train, validation, config: DenseNetConfig | None = None):
    """Minibatch SGD with the plateau/snapshot callback.

    Returns ``(best_model, history)`` where ``best_model`` holds the
    parameters from the epoch with the highest validation accuracy (the
    earliest such epoch on ties) and ``history`` has one EpochRecord per
    epoch, ``lr`` being the rate used during that epoch.
    """
    cfg = config or model.config
    if not train or not validation:
        raise ValueError("training and validation sets must be non-empty")
    y_val = np.array([int(s.label) for s in validation])
    if len(set(y_val.tolist())) < 2:
        raise ValueError("validation set must contain both classes")
    x_tr, y_tr = _stack(train, cfg.side), np.array([int(s.label) for s in train])
    x_val = _stack(validation, cfg.side)

    params = {k: v.copy() for k, v in model.params.items()}
    names = list(params)
    rng = make_rng(derive_seed(cfg.seed, _SHUFFLE_OFFSET))
    state = CallbackState(lr=cfg.lr)
    history = []
    n = len(x_tr)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(params, cfg, x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start} (lr={state.lr})")
            total += loss * len(idx)
            updated = layers.sgd_step([params[k] for k in names], [grads[k] for k in names], state.lr)
            params = dict(zip(names, updated))
        val_acc = _accuracy(params, cfg, x_val, y_val)
        history.append(EpochRecord(epoch, total / n, val_acc, state.lr))
        state.end_epoch(epoch, val_acc, params, cfg.patience, cfg.decay)

    stats = DatasetStats.from_labels(s.label for s in train)
    best = DenseNetModel(cfg, state.best_params, cfg.seed, stats.n_asd, stats.n_non_asd)
    return best, history


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def dumps_model(model: DenseNetModel) -> bytes:
    """Text header, then each tensor as: uint32 ndim, uint32 dims, float64 data (little-endian)."""
    lines = [MODEL_HEADER]
    for f in fields(DenseNetConfig):
        lines.append(f"{f.name} = {_fmt(getattr(model.config, f.name))}")
    lines += [f"model_seed = {model.seed}", f"n_asd = {model.n_asd}",
              f"n_non_asd = {model.n_non_asd}", f"tensors = {len(model.params)}", "---", ""]
    blob = bytearray("\n".join(lines).encode("utf-8"))
    for name, shape in param_shapes(model.config).items():
        arr = model.params[name]
        if arr.shape != shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        blob += struct.pack(f"<I{len(shape)}I", len(shape), *shape)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(blob)


def loads_model(data: bytes) -> DenseNetModel:
    head, sep, body = data.partition(b"\n---\n")
    if not sep:
        raise ValueError("missing header terminator")
    lines = head.decode("utf-8").split("\n")
    if lines[0] != MODEL_HEADER:
        raise ValueError(f"not a DenseNet model file (header {lines[0]!r})")
    values = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        values[key] = value
    kwargs = {}
    for f in fields(DenseNetConfig):
        kwargs[f.name] = float(values[f.name]) if f.type == "float" else int(values[f.name])
    cfg = DenseNetConfig(**kwargs)

    params, pos = {}, 0
    for name, shape in param_shapes(cfg).items():
        (ndim,) = struct.unpack_from("<I", body, pos)
        dims = struct.unpack_from(f"<{ndim}I", body, pos + 4)
        pos += 4 + 4 * ndim
        if tuple(dims) != shape:
            raise ValueError(f"tensor {name}: stored shape {dims}, config implies {shape}")
        count = int(np.prod(dims))
        params[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * count
    if pos != len(body):
        raise ValueError(f"{len(body) - pos} trailing bytes after the last tensor")
    return DenseNetModel(cfg, params, int(values["model_seed"]),
                         int(values["n_asd"]), int(values["n_non_asd"]))
