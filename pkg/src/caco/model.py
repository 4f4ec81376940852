"""Query/key MLP encoders, the category classifier, and checkpoints.

The query encoder is trained by gradient descent; the key encoder shares
its shapes and moves only through an exponential moving average of the
query parameters. Embeddings are L2-normalized per row so that the usual
low temperatures (0.07) make sense for dot-product similarities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ParameterError

_INIT_NAME = "caco-checkpoint"
_INIT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input, hidden..., embedding); hidden layers use ReLU."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ParameterError("need at least one hidden layer")
        if any(w < 1 for w in widths):
            raise ParameterError(f"layer widths must be positive, got {widths}")
        if widths[-1] < 2:
            raise ParameterError("embedding dimension must be at least 2")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def embed_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass
class MlpParams:
    """Weight/bias tensors per layer, in declaration order."""

    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self, requires_grad: bool) -> "MlpParams":
        return MlpParams(
            [Tensor(w.data.copy(), requires_grad) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad) for b in self.biases],
        )


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Uniform +/- sqrt(6/fan_in) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths, spec.layer_widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), True))
        biases.append(Tensor(np.zeros(fan_out), True))
    return MlpParams(weights, biases)


def encode(params: MlpParams, x: Tensor) -> Tensor:
    """MLP forward pass over a (batch, D) block, unit-normalized per row."""
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(
            f"encode expects (batch, {params.weights[0].shape[0]}) inputs, got {x.shape}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add_rowvec(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return ad.l2_normalize(h)


def embed(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain-array convenience wrapper around encode (no gradients)."""
    return encode(params, Tensor(np.asarray(x, dtype=np.float64))).data


@dataclass
class Classifier:
    """Linear map from embeddings to category logits."""

    weight: Tensor  # (d, C)
    bias: Tensor  # (C,)

    @property
    def num_categories(self) -> int:
        return self.weight.shape[1]


def init_classifier(embed_dim: int, num_categories: int, seed: int) -> Classifier:
    if num_categories < 2:
        raise ParameterError("classifier needs at least 2 categories")
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / embed_dim)
    return Classifier(
        Tensor(rng.uniform(-limit, limit, (embed_dim, num_categories)), True),
        Tensor(np.zeros(num_categories), True),
    )


def classifier_logits(clf: Classifier, embeddings: Tensor) -> Tensor:
    return ad.add_rowvec(ad.matmul(embeddings, clf.weight), clf.bias)


def classify(clf: Classifier, embeddings) -> np.ndarray:
    """Per-row softmax probabilities on the simplex; detached from any tape."""
    e = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    if e.ndim != 2 or e.shape[1] != clf.weight.shape[0]:
        raise DimensionError(
            f"classify expects (batch, {clf.weight.shape[0]}) embeddings, got {e.shape}"
        )
    z = e @ clf.weight.data + clf.bias.data
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


@dataclass
class EncoderPair:
    """Query parameters, key parameters of the same shapes, and the EMA coefficient."""

    query: MlpParams
    key: MlpParams
    momentum: float

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ParameterError(f"momentum must lie in [0, 1], got {self.momentum}")


def new_encoder_pair(spec: MlpSpec, seed: int, momentum: float) -> EncoderPair:
    """Initialize the query encoder and copy it exactly into the key encoder."""
    query = init_params(spec, seed)
    return EncoderPair(query, query.copy(requires_grad=False), momentum)


def momentum_update(pair: EncoderPair) -> EncoderPair:
    """key <- m*key + (1-m)*query, coordinate-wise; no gradient flows through."""
    if not 0.0 <= pair.momentum <= 1.0:
        raise ParameterError(f"momentum must lie in [0, 1], got {pair.momentum}")
    m = pair.momentum
    for tq, tk in zip(pair.query.tensors(), pair.key.tensors()):
        tk.data = m * tk.data + (1.0 - m) * tq.data
    return pair


@dataclass
class CacoModel:
    """Everything needed to score samples and to resume from disk."""

    mlp_spec: MlpSpec
    num_categories: int
    seed: int
    encoders: EncoderPair
    classifier: Classifier

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        return classify(self.classifier, embed(self.encoders.query, x))

    def predict_indices(self, x: np.ndarray) -> np.ndarray:
        """1-based argmax categories for a (batch, D) block."""
        return np.argmax(self.predict_probs(x), axis=1) + 1


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line, then raw little-endian float64
# arrays in declaration order (query layers, key layers, classifier).
# ---------------------------------------------------------------------------


def _declared_arrays(model: CacoModel) -> list[tuple[str, Tensor]]:
    out = []
    for side, params in (("query", model.encoders.query), ("key", model.encoders.key)):
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            out.append((f"{side}.w{i}", w))
            out.append((f"{side}.b{i}", b))
    out.append(("classifier.weight", model.classifier.weight))
    out.append(("classifier.bias", model.classifier.bias))
    return out


def save_checkpoint(path: str | Path, model: CacoModel) -> None:
    arrays = _declared_arrays(model)
    header = {
        "format": _INIT_NAME,
        "version": _INIT_VERSION,
        "layer_widths": list(model.mlp_spec.layer_widths),
        "num_categories": model.num_categories,
        "seed": model.seed,
        "encoder_momentum": model.encoders.momentum,
        "arrays": [{"name": name, "shape": list(t.shape)} for name, t in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, t in arrays:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> CacoModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != _INIT_NAME or header.get("version") != _INIT_VERSION:
            raise ContractError(f"not a recognizable checkpoint: {path}")
        blob = fh.read()

    spec = MlpSpec(tuple(header["layer_widths"]))
    num_categories = int(header["num_categories"])
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    if offset != len(blob):
        raise ContractError("checkpoint payload length does not match its header")

    n_layers = len(spec.layer_widths) - 1

    def params_for(side: str, requires_grad: bool) -> MlpParams:
        return MlpParams(
            [Tensor(arrays[f"{side}.w{i}"], requires_grad) for i in range(n_layers)],
            [Tensor(arrays[f"{side}.b{i}"], requires_grad) for i in range(n_layers)],
        )

    encoders = EncoderPair(
        params_for("query", True),
        params_for("key", False),
        float(header["encoder_momentum"]),
    )
    classifier = Classifier(
        Tensor(arrays["classifier.weight"], True),
        Tensor(arrays["classifier.bias"], True),
    )
    return CacoModel(spec, num_categories, int(header["seed"]), encoders, classifier)
