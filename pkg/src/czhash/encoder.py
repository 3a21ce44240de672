"""Feed-forward encoders with hand-written backpropagation.

Hidden layers use ReLU followed by inverted dropout (training only); the
output layer uses tanh, so every encoder output lies in (-1, 1).  Weight
matrices are stored as ``(fan_out, fan_in)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, ShapeError

CHECKPOINT_FORMAT = "czhash-encoder"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    hidden_activation: str = "relu"
    output_activation: str = "tanh"
    dropout_rate: float = 0.5
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise ConfigError("layer sizes must be positive")
        if self.hidden_activation != "relu" or self.output_activation != "tanh":
            raise ConfigError("only relu hidden layers and a tanh output are supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class EncoderParams:
    config: EncoderConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer (mutable views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Uniform weights in ``[-init_scale, init_scale] / sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    dims = cfg.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)) * (cfg.init_scale / np.sqrt(fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return EncoderParams(cfg, weights, biases)


def forward(
    params: EncoderParams,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    cfg = params.config
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"expected (batch, {cfg.input_dim}) input, got {x.shape}")
    use_dropout = train_mode and cfg.dropout_rate > 0
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout needs an explicit random generator")
    keep = 1.0 - cfg.dropout_rate

    cache = ForwardCache(inputs=x)
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        cache.pre.append(z)
        if k == last:
            a = np.tanh(z)
            cache.masks.append(None)
        else:
            a = np.maximum(z, 0.0)
            if use_dropout:
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                cache.masks.append(mask)
            else:
                cache.masks.append(None)
        cache.post.append(a)
    return a, cache


def backward(
    params: EncoderParams, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients ``(dW per layer, db per layer)`` of ``sum(output * output_grad)``."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ShapeError(
            f"output gradient shape {g.shape} does not match outputs {cache.post[-1].shape}"
        )
    n_layers = len(params.weights)
    dws: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    # tanh' = 1 - tanh^2
    delta = g * (1.0 - cache.post[-1] ** 2)
    for k in range(n_layers - 1, -1, -1):
        prev = cache.inputs if k == 0 else cache.post[k - 1]
        dws[k] = delta.T @ prev
        dbs[k] = delta.sum(axis=0)
        if k == 0:
            break
        g = delta @ params.weights[k]
        mask = cache.masks[k - 1]
        if mask is not None:
            g = g * mask
        delta = g * (cache.pre[k - 1] > 0)
    return dws, dbs


def encode_features(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass (no dropout)."""
    return forward(params, x, train_mode=False)[0]


# ---------------------------------------------------------------------------
# checkpoints


def params_to_json(params: EncoderParams) -> dict:
    cfg = asdict(params.config)
    cfg["hidden_dims"] = list(cfg["hidden_dims"])
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "layers": [
            {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def params_from_json(data: dict) -> EncoderParams:
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise DatasetError("not a version-1 czhash encoder checkpoint")
    cfg = EncoderConfig(**data["config"])
    weights, biases = [], []
    for layer in data["layers"]:
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(np.array(layer["bias"], dtype=np.float64))
    dims = cfg.layer_dims
    for w, fan_in, fan_out in zip(weights, dims[:-1], dims[1:]):
        if w.shape != (fan_out, fan_in):
            raise ShapeError(f"checkpoint layer shape {w.shape} != {(fan_out, fan_in)}")
    return EncoderParams(cfg, weights, biases)


def save_params(path, params: EncoderParams) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(params_to_json(params)))


def load_params(path) -> EncoderParams:
    return params_from_json(json.loads(Path(path).read_text()))
