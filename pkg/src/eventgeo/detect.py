"""Event detection: hyperbolic graph encoder, linear decoder, softmax classifier.

Each encoder layer maps node features through the ball and back,
aggregates neighbours in the tangent space at the origin, and re-enters
the ball::

    H_out = exp(act(A_hat @ log(exp(H_in @ W))))

where ``A_hat`` is the row-normalised adjacency with self-loops and ``act``
is ReLU except on the last layer. The decoder reads ``log(H)`` back into
Euclidean space. Gradients are derived by hand, so every step keeps what
the backward pass needs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from eventgeo.graph import MessageGraph
from eventgeo.hyperbolic import HyperbolicConfig, exp_map, exp_map_vjp, log_map, log_map_vjp
from eventgeo.ingest import Message

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "eventgeo-model/1"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    train_fraction: float = 0.7
    hidden_dim: int = 64
    num_layers: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("hidden_dim and num_layers must be positive")


@dataclass
class ModelParams:
    layer_weights: list[np.ndarray]
    decoder_weight: np.ndarray
    decoder_bias: np.ndarray
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.check_shapes()

    def check_shapes(self, input_dim: int | None = None) -> None:
        dims = [w.shape for w in self.layer_weights]
        if not dims or any(len(d) != 2 for d in dims):
            raise ValueError("layer weights must be a non-empty list of matrices")
        if input_dim is not None and dims[0][0] != input_dim:
            raise ValueError(f"first layer expects {dims[0][0]} inputs, graph has {input_dim}")
        for (_, out), (nxt, _) in zip(dims, dims[1:]):
            if out != nxt:
                raise ValueError("layer weight shapes do not chain")
        hidden = dims[-1][1]
        if self.decoder_weight.ndim != 2 or self.decoder_weight.shape[0] != hidden:
            raise ValueError("decoder weight does not match encoder output")
        if self.decoder_bias.shape != (self.decoder_weight.shape[1],):
            raise ValueError("decoder bias shape mismatch")
        if self.classifier_weight.ndim != 2 or self.classifier_weight.shape[0] != self.decoder_weight.shape[1]:
            raise ValueError("classifier weight does not match decoder output")
        if self.classifier_bias.shape != (self.classifier_weight.shape[1],):
            raise ValueError("classifier bias shape mismatch")
        if self.classes and len(self.classes) != self.classifier_weight.shape[1]:
            raise ValueError("class list length does not match classifier width")

    def tensors(self) -> dict[str, np.ndarray]:
        named = {f"layer{i}": w for i, w in enumerate(self.layer_weights)}
        named.update(
            decoder_weight=self.decoder_weight,
            decoder_bias=self.decoder_bias,
            classifier_weight=self.classifier_weight,
            classifier_bias=self.classifier_bias,
        )
        return named

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], classes: Sequence[str]) -> ModelParams:
        n_layers = sum(1 for k in tensors if k.startswith("layer"))
        return cls(
            layer_weights=[np.asarray(tensors[f"layer{i}"]) for i in range(n_layers)],
            decoder_weight=np.asarray(tensors["decoder_weight"]),
            decoder_bias=np.asarray(tensors["decoder_bias"]),
            classifier_weight=np.asarray(tensors["classifier_weight"]),
            classifier_bias=np.asarray(tensors["classifier_bias"]),
            classes=list(classes),
        )

    def copy(self) -> ModelParams:
        return ModelParams.from_tensors({k: v.copy() for k, v in self.tensors().items()}, self.classes)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(input_dim: int, classes: Sequence[str], tcfg: TrainConfig) -> ModelParams:
    rng = np.random.default_rng(tcfg.seed)
    dims = [input_dim] + [tcfg.hidden_dim] * tcfg.num_layers
    layers = [glorot(rng, a, b) for a, b in zip(dims, dims[1:])]
    h = tcfg.hidden_dim
    return ModelParams(
        layer_weights=layers,
        decoder_weight=glorot(rng, h, h),
        decoder_bias=np.zeros(h),
        classifier_weight=glorot(rng, h, len(classes)),
        classifier_bias=np.zeros(len(classes)),
        classes=list(classes),
    )


def normalized_adjacency(A: sparse.spmatrix) -> sparse.csr_matrix:
    """Row-normalised ``A + I``."""
    n = A.shape[0]
    A_self = (sparse.csr_matrix(A) + sparse.identity(n, format="csr")).tocsr()
    deg = np.asarray(A_self.sum(axis=1)).ravel()
    return sparse.diags(1.0 / deg) @ A_self


# ── Forward / backward ──────────────────────────────────


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(X: np.ndarray, A_hat: sparse.spmatrix, params: ModelParams, cfg: HyperbolicConfig):
    steps = []
    H = X
    last = len(params.layer_weights) - 1
    for i, W in enumerate(params.layer_weights):
        Y = H @ W
        P = exp_map(Y, cfg)
        T = log_map(P, cfg)
        S = A_hat @ T
        R = np.maximum(S, 0.0) if i < last else S
        H_next = exp_map(R, cfg)
        steps.append((H, Y, P, S, R))
        H = H_next
    T_out = log_map(H, cfg)
    Z = T_out @ params.decoder_weight + params.decoder_bias
    logits = Z @ params.classifier_weight + params.classifier_bias
    return H, T_out, Z, logits, steps


def encode(graph: MessageGraph, params: ModelParams, cfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    """Ball-point embeddings of every message node."""
    params.check_shapes(graph.features.shape[1])
    H, *_ = _forward(graph.features, normalized_adjacency(graph.adjacency), params, cfg)
    return H


def logits_from_embeddings(H: np.ndarray, params: ModelParams, cfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    if H.shape[1] != params.decoder_weight.shape[0]:
        raise ValueError(f"embedding width {H.shape[1]} does not match decoder input {params.decoder_weight.shape[0]}")
    Z = log_map(H, cfg) @ params.decoder_weight + params.decoder_bias
    return Z @ params.classifier_weight + params.classifier_bias


def decode_classify(H: np.ndarray, params: ModelParams, cfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    """Class probabilities for each embedding row."""
    return _softmax(logits_from_embeddings(H, params, cfg))


def loss_and_grads(
    X: np.ndarray,
    A_hat: sparse.spmatrix,
    targets: np.ndarray,
    train_idx: np.ndarray,
    params: ModelParams,
    cfg: HyperbolicConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over ``train_idx`` and its gradient for every tensor."""
    H, T_out, Z, logits, steps = _forward(X, A_hat, params, cfg)
    z = logits[train_idx] - logits[train_idx].max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = targets[train_idx]
    n_train = len(train_idx)
    loss = -float(log_probs[np.arange(n_train), y].mean())

    d_logits = np.zeros_like(logits)
    d_train = np.exp(log_probs)
    d_train[np.arange(n_train), y] -= 1.0
    d_logits[train_idx] = d_train / n_train

    grads: dict[str, np.ndarray] = {}
    grads["classifier_weight"] = Z.T @ d_logits
    grads["classifier_bias"] = d_logits.sum(axis=0)
    dZ = d_logits @ params.classifier_weight.T
    grads["decoder_weight"] = T_out.T @ dZ
    grads["decoder_bias"] = dZ.sum(axis=0)
    dH = log_map_vjp(dZ @ params.decoder_weight.T, H, cfg)

    A_hat_T = A_hat.T.tocsr()
    last = len(params.layer_weights) - 1
    for i in range(last, -1, -1):
        H_in, Y, P, S, R = steps[i]
        dR = exp_map_vjp(dH, R, cfg)
        dS = dR * (S > 0) if i < last else dR
        dT = A_hat_T @ dS
        dP = log_map_vjp(dT, P, cfg)
        dY = exp_map_vjp(dP, Y, cfg)
        grads[f"layer{i}"] = H_in.T @ dY
        dH = dY @ params.layer_weights[i].T
    return loss, grads


# ── Training ────────────────────────────────────────────


def stratified_split(labels: Sequence[int], fraction: float, seed: int) -> np.ndarray:
    """Indices of a per-class ``fraction`` sample (at least one per class)."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    chosen = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        k = max(1, int(math.ceil(fraction * len(idx))))
        chosen.append(rng.permutation(idx)[:k])
    return np.sort(np.concatenate(chosen))


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float]
    best_epoch: int
    train_ids: list[str]


def train(
    graph: MessageGraph,
    labels: Mapping[str, str],
    tcfg: TrainConfig = TrainConfig(),
    hcfg: HyperbolicConfig = HyperbolicConfig(),
) -> TrainResult:
    """Full-batch gradient descent on cross-entropy over a stratified train split.

    Returns the parameters from the epoch with the lowest training loss.
    """
    missing = [m for m in labels if m not in graph.index]
    if missing:
        raise ValueError(f"{len(missing)} labelled ids not in graph, e.g. {missing[0]!r}")
    classes = sorted(set(labels.values()))
    if len(classes) < 2:
        raise ValueError("training needs at least two distinct labels")
    class_idx = {c: i for i, c in enumerate(classes)}

    labelled = sorted(graph.index[m] for m in labels)
    targets = np.full(graph.n, -1, dtype=np.int64)
    for m, lab in labels.items():
        targets[graph.index[m]] = class_idx[lab]
    local = stratified_split(targets[labelled], tcfg.train_fraction, tcfg.seed)
    train_idx = np.asarray(labelled)[local]

    X = graph.features
    A_hat = normalized_adjacency(graph.adjacency)
    params = init_params(X.shape[1], classes, tcfg)
    history: list[float] = []
    best, best_loss, best_epoch = params.copy(), math.inf, 0
    for epoch in range(tcfg.epochs):
        loss, grads = loss_and_grads(X, A_hat, targets, train_idx, params, hcfg)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became {loss} at epoch {epoch}")
        history.append(loss)
        if loss < best_loss:
            best, best_loss, best_epoch = params.copy(), loss, epoch
        for name, tensor in params.tensors().items():
            tensor -= tcfg.learning_rate * grads[name]
        logger.debug("epoch %d loss %.6f", epoch, loss)
    logger.info("trained %d epochs, best loss %.5f at epoch %d", tcfg.epochs, best_loss, best_epoch)
    return TrainResult(best, history, best_epoch, [graph.message_ids[i] for i in train_idx])


# ── Inference ───────────────────────────────────────────


@dataclass
class EventClusterSet:
    clusters: dict[str, list[str]] = field(default_factory=dict)

    def assignment(self) -> dict[str, str]:
        return {m: e for e, ids in self.clusters.items() for m in ids}

    def __len__(self) -> int:
        return len(self.clusters)


def predict(graph: MessageGraph, params: ModelParams, hcfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    return decode_classify(encode(graph, params, hcfg), params, hcfg)


def detect_events(
    messages: Sequence[Message],
    graph: MessageGraph,
    params: ModelParams,
    hcfg: HyperbolicConfig = HyperbolicConfig(),
) -> EventClusterSet:
    """Group messages by their most probable event class."""
    if not messages:
        return EventClusterSet()
    probs = predict(graph, params, hcfg)
    clusters: dict[str, list[str]] = {}
    for msg in messages:
        cls = params.classes[int(np.argmax(probs[graph.index[msg.id]]))]
        clusters.setdefault(cls, []).append(msg.id)
    return EventClusterSet(dict(sorted(clusters.items())))


# ── Checkpoints ─────────────────────────────────────────


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def dumps_checkpoint(params: ModelParams, hcfg: HyperbolicConfig, tcfg: TrainConfig | None = None) -> str:
    """Self-describing JSON; tensors are base64 little-endian float64."""
    tensors = {}
    for name, arr in params.tensors().items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        tensors[name] = {"shape": list(data.shape), "dtype": "<f8", "data": base64.b64encode(data.tobytes()).decode("ascii")}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "classes": params.classes,
        "curvature": hcfg.curvature_c,
        "hyperbolic": asdict(hcfg),
        "config_hash": config_hash(hcfg, *([tcfg] if tcfg else [])),
        "tensors": tensors,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path: str | Path, params: ModelParams, hcfg: HyperbolicConfig, tcfg: TrainConfig | None = None) -> None:
    Path(path).write_text(dumps_checkpoint(params, hcfg, tcfg), encoding="utf-8")


def load_checkpoint(path: str | Path, input_dim: int | None = None) -> tuple[ModelParams, HyperbolicConfig]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {doc.get('format')!r}")
    tensors = {}
    for name, spec in doc["tensors"].items():
        raw = base64.b64decode(spec["data"])
        arr = np.frombuffer(raw, dtype="<f8")
        shape = tuple(spec["shape"])
        if arr.size != math.prod(shape):
            raise CheckpointError(f"tensor {name}: {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(shape).astype(np.float64)
    try:
        params = ModelParams.from_tensors(tensors, doc["classes"])
        params.check_shapes(input_dim)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"shape mismatch: {exc}") from None
    return params, HyperbolicConfig(**doc["hyperbolic"])
