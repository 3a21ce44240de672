"""Joint optimisation of encoders, category spaces, projections and codes.

The objective over the training set is::

    J = ||s F1 F1' - T11||^2 + ||s F2 F2' - T22||^2 + 2 ||s F1 F2' - T12||^2
        + alpha * sum_v ||F_v - C_v A||^2
        + beta  * sum_v ||C_v W_v - B||^2

with ``s = 1/d`` and ``T = S`` (``similarity_scale="unit"``) or
``T = 2S - 1`` (``"plus_minus"``).  ``B`` is shared by both modalities.

Unseen instances are hashed as ``sign(c W)`` where ``c`` is the least-squares
category vector of the encoder output.  Training C also absorbs the
quantisation term, so after training each ``W_v`` is refitted from the
least-squares C onto ``B``; these hashing projections live in
``TrainState.hash_w1`` and ``hash_w2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import AttributeMatrix, CrossModalDataset, ScenarioSplit
from .encoder import EncoderConfig, EncoderParams, backward, encode_features, forward, init_params
from .errors import ConfigError, NumericError, ShapeError
from .similarity import SimilarityMatrices

ABLATIONS = ("full", "nFS", "nLS", "nJ")
SIMILARITY_SCALES = ("unit", "plus_minus")

# similarity mode each ablation expects
ABLATION_SIMILARITY = {"full": "composite", "nFS": "label", "nLS": "feature", "nJ": "composite"}


@dataclass(frozen=True)
class TrainerConfig:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    bits: int = 16
    batch_size: int = 128
    iterations: int = 500
    steps_per_epoch: int | None = None
    learning_rate: float = 1e-2
    similarity_scale: str = "unit"
    ablation: str = "full"
    c_update: str = "closed_form"
    w_update: str = "closed_form"
    exact_f: bool = False
    ridge: float = 1e-8
    hidden_dims: tuple[int, ...] = (64,)
    dropout_rate: float = 0.5
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.bits < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("bits and batch_size must be >= 1, iterations >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.similarity_scale not in SIMILARITY_SCALES:
            raise ConfigError(f"similarity_scale must be one of {SIMILARITY_SCALES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        for name in ("c_update", "w_update"):
            if getattr(self, name) not in ("closed_form", "gradient"):
                raise ConfigError(f"{name} must be 'closed_form' or 'gradient'")


@dataclass
class LossBreakdown:
    sim11: float
    sim22: float
    sim12: float
    cat1: float
    cat2: float
    quant1: float
    quant2: float
    total: float

    @property
    def quant(self) -> float:
        return self.quant1 + self.quant2

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainState:
    f1: np.ndarray
    f2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    codes: np.ndarray
    iteration: int = 0
    history: list[LossBreakdown] = field(default_factory=list)
    # quantisation loss (before, after) around every code update
    code_steps: list[tuple[float, float]] = field(default_factory=list)
    hash_w1: np.ndarray | None = None
    hash_w2: np.ndarray | None = None

    def copy(self) -> "TrainState":
        def dup(x):
            return None if x is None else x.copy()

        return TrainState(
            self.f1.copy(), self.f2.copy(), self.c1.copy(), self.c2.copy(),
            self.w1.copy(), self.w2.copy(), self.codes.copy(), self.iteration,
            list(self.history), list(self.code_steps), dup(self.hash_w1), dup(self.hash_w2),
        )

    def hashing_projection(self, v: int) -> np.ndarray:
        """Projection used to hash new modality-``v`` rows (falls back to ``W_v``)."""
        w = (self.hash_w1, self.w1) if v == 1 else (self.hash_w2, self.w2)
        return w[1] if w[0] is None else w[0]


def _attr_array(attrs) -> np.ndarray:
    return attrs.vectors if isinstance(attrs, AttributeMatrix) else np.asarray(attrs, float)


def _targets(sims: SimilarityMatrices, cfg: TrainerConfig):
    if cfg.similarity_scale == "plus_minus":
        return 2.0 * sims.s11 - 1.0, 2.0 * sims.s22 - 1.0, 2.0 * sims.s12 - 1.0
    return sims.s11, sims.s22, sims.s12


def _check_shapes(state: TrainState, sims: SimilarityMatrices | None, a: np.ndarray):
    n, d = state.f1.shape
    if state.f2.shape != (n, d):
        raise ShapeError("F1 and F2 must have identical shapes")
    if a.shape[1] != d or state.c1.shape != (n, a.shape[0]) or state.c2.shape != (n, a.shape[0]):
        raise ShapeError("C, A and F shapes are inconsistent")
    if state.w1.shape[0] != a.shape[0] or state.codes.shape != (n, state.w1.shape[1]):
        raise ShapeError("W and B shapes are inconsistent")
    if sims is not None and sims.s11.shape != (n, n):
        raise ShapeError(f"similarity matrices are {sims.s11.shape}, expected {(n, n)}")


def total_loss(
    state: TrainState, sims: SimilarityMatrices, attrs, cfg: TrainerConfig
) -> LossBreakdown:
    a = _attr_array(attrs)
    _check_shapes(state, sims, a)
    s = 1.0 / state.f1.shape[1]
    t11, t22, t12 = _targets(sims, cfg)
    f1, f2, b = state.f1, state.f2, state.codes
    sim11 = float(np.sum((s * f1 @ f1.T - t11) ** 2))
    sim22 = float(np.sum((s * f2 @ f2.T - t22) ** 2))
    sim12 = 2.0 * float(np.sum((s * f1 @ f2.T - t12) ** 2))
    cat1 = float(np.sum((f1 - state.c1 @ a) ** 2))
    cat2 = float(np.sum((f2 - state.c2 @ a) ** 2))
    quant1 = float(np.sum((state.c1 @ state.w1 - b) ** 2))
    quant2 = float(np.sum((state.c2 @ state.w2 - b) ** 2))
    total = sim11 + sim22 + sim12 + cfg.alpha * (cat1 + cat2) + cfg.beta * (quant1 + quant2)
    return LossBreakdown(sim11, sim22, sim12, cat1, cat2, quant1, quant2, total)


def quantization_loss(state: TrainState, codes: np.ndarray | None = None) -> float:
    b = state.codes if codes is None else codes
    return float(
        np.sum((state.c1 @ state.w1 - b) ** 2) + np.sum((state.c2 @ state.w2 - b) ** 2)
    )


def grad_features(state, sims, attrs, cfg, batch=None):
    """Exact ``dJ/dF1`` and ``dJ/dF2`` restricted to the rows in ``batch``."""
    a = _attr_array(attrs)
    _check_shapes(state, sims, a)
    rows = np.arange(state.f1.shape[0]) if batch is None else np.asarray(batch)
    return _feature_grads(state, _target_pack(sims, cfg), a, cfg.alpha, rows)


def _target_pack(sims, cfg):
    # targets and their transposes, so batch gradients only gather rows
    ts = _targets(sims, cfg)
    return ts + tuple(np.ascontiguousarray(t.T) for t in ts)


def _feature_grads(state, pack, a, alpha, rows):
    t11, t22, t12, t11t, t22t, t12t = pack
    s = 1.0 / state.f1.shape[1]
    f1, f2 = state.f1, state.f2
    fb1, fb2 = f1[rows], f2[rows]

    # (R + R') restricted to batch rows, for the symmetric self terms
    g11 = s * fb1 @ f1.T
    g22 = s * fb2 @ f2.T
    r11 = 2 * g11 - t11[rows] - t11t[rows]
    r22 = 2 * g22 - t22[rows] - t22t[rows]
    r12_rows = s * fb1 @ f2.T - t12[rows]  # R12[batch, :]
    r12_cols = s * fb2 @ f1.T - t12t[rows]  # R12[:, batch]'

    d1 = 2 * s * r11 @ f1 + 4 * s * r12_rows @ f2 + 2 * alpha * (fb1 - state.c1[rows] @ a)
    d2 = 2 * s * r22 @ f2 + 4 * s * r12_cols @ f1 + 2 * alpha * (fb2 - state.c2[rows] @ a)
    return d1, d2


def grad_category(state, attrs, cfg, batch=None):
    """Exact ``dJ/dC1`` and ``dJ/dC2`` restricted to the rows in ``batch``."""
    a = _attr_array(attrs)
    rows = np.arange(state.c1.shape[0]) if batch is None else np.asarray(batch)
    b = state.codes[rows]
    out = []
    for f, c, w in ((state.f1, state.c1, state.w1), (state.f2, state.c2, state.w2)):
        cb = c[rows]
        out.append(-2 * cfg.alpha * (f[rows] - cb @ a) @ a.T + 2 * cfg.beta * (cb @ w - b) @ w.T)
    return out[0], out[1]


def grad_projection(state, cfg):
    """Exact ``dJ/dW1`` and ``dJ/dW2``."""
    return tuple(
        2 * cfg.beta * (c.T @ (c @ w) - c.T @ state.codes)
        for c, w in ((state.c1, state.w1), (state.c2, state.w2))
    )


def closed_form_projection(c: np.ndarray, codes: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Ridge least squares ``(C'C + ridge I)^-1 C'B``."""
    gram = c.T @ c
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    try:
        return np.linalg.solve(gram, c.T @ codes)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular C'C in closed-form projection update: {exc}") from None


def least_squares_category(f: np.ndarray, a: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Rows ``c`` minimising ``||f - c A||``: ``f A' (A A' + ridge I)^-1``."""
    gram = a @ a.T + ridge * np.eye(a.shape[0])
    return np.linalg.solve(gram, a @ f.T).T


def sign_codes(u: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(u) >= 0, 1.0, -1.0)


def update_codes(state: TrainState, cfg: TrainerConfig) -> np.ndarray:
    """Codes maximising ``tr(B' U)`` with ``U = lam (C1 W1 + C2 W2)``."""
    u = cfg.lam * (state.c1 @ state.w1 + state.c2 @ state.w2)
    return sign_codes(u)


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = arrays
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _encoder_configs(ds: CrossModalDataset, cfg: TrainerConfig, seeds) -> tuple[EncoderConfig, ...]:
    d = ds.attributes.d
    return tuple(
        EncoderConfig(
            input_dim=ds.modality(v).dim,
            output_dim=d,
            hidden_dims=cfg.hidden_dims,
            dropout_rate=cfg.dropout_rate,
            init_scale=cfg.init_scale,
            seed=seed,
        )
        for v, seed in zip((1, 2), seeds)
    )


def _check_finite(loss: LossBreakdown, epoch: int) -> None:
    if not math.isfinite(loss.total):
        raise NumericError(f"non-finite objective at epoch {epoch}: {loss.as_dict()}")


def init_state(params1, params2, x1, x2, a, cfg: TrainerConfig, rng) -> TrainState:
    """Eval-mode features, least-squares C, a shared Gaussian W and B = sign(C W)."""
    f1 = encode_features(params1, x1)
    f2 = encode_features(params2, x2)
    c1 = least_squares_category(f1, a, cfg.ridge)
    c2 = least_squares_category(f2, a, cfg.ridge)
    w1 = rng.standard_normal((a.shape[0], cfg.bits)) / np.sqrt(a.shape[0])
    w2 = w1.copy()
    codes = sign_codes(cfg.lam * (c1 @ w1 + c2 @ w2))
    return TrainState(f1, f2, c1, c2, w1, w2, codes)


def train(
    ds: CrossModalDataset,
    split: ScenarioSplit,
    sims: SimilarityMatrices,
    cfg: TrainerConfig,
    callback=None,
) -> tuple[EncoderParams, EncoderParams, TrainState]:
    """Alternating minibatch optimisation; ``callback(epoch, loss)`` after each epoch.

    ``state.history[0]`` is the objective at initialisation and one entry
    follows per epoch.
    """
    idx = np.asarray(split.train)
    x1 = ds.modality1.features[idx]
    x2 = ds.modality2.features[idx]
    a = ds.attributes.vectors
    n = idx.size
    if sims.n != n:
        raise ShapeError(f"similarity matrices cover {sims.n} instances, split trains {n}")

    seq = np.random.SeedSequence(cfg.seed)
    enc_seed1, enc_seed2, state_seed, loop_seed = (
        int(s.generate_state(1)[0]) for s in seq.spawn(4)
    )
    enc1, enc2 = _encoder_configs(ds, cfg, (enc_seed1, enc_seed2))
    params1, params2 = init_params(enc1), init_params(enc2)
    state = init_state(params1, params2, x1, x2, a, cfg, np.random.default_rng(state_seed))
    loss = total_loss(state, sims, a, cfg)
    _check_finite(loss, 0)
    state.history.append(loss)
    if cfg.iterations == 0:
        return params1, params2, state

    rng = np.random.default_rng(loop_seed)
    if cfg.ablation == "nJ":
        _train_staged(params1, params2, state, x1, x2, a, sims, cfg, rng, callback)
    else:
        _train_joint(params1, params2, state, x1, x2, a, sims, cfg, rng, callback)
    fit_hashing_projections(state, a, cfg.ridge)
    return params1, params2, state


def fit_hashing_projections(state: TrainState, attrs, ridge: float = 1e-8) -> None:
    """Set ``hash_w{1,2}`` to the least-squares map from ``LS(F_v)`` onto ``B``."""
    a = _attr_array(attrs)
    for v, f in ((1, state.f1), (2, state.f2)):
        w = closed_form_projection(least_squares_category(f, a, ridge), state.codes, ridge)
        setattr(state, f"hash_w{v}", w)


def _batches(n, cfg, rng):
    steps = cfg.steps_per_epoch or max(1, math.ceil(n / cfg.batch_size))
    perm = rng.permutation(n)
    for k in range(steps):
        start = (k * cfg.batch_size) % n
        rows = np.take(perm, np.arange(start, start + min(cfg.batch_size, n)), mode="wrap")
        yield np.sort(rows)


def _forward_batch(state, params1, params2, x1, x2, rows, cfg, rng):
    if cfg.exact_f:
        state.f1[:] = encode_features(params1, x1)
        state.f2[:] = encode_features(params2, x2)
    out1, cache1 = forward(params1, x1[rows], train_mode=True, rng=rng)
    out2, cache2 = forward(params2, x2[rows], train_mode=True, rng=rng)
    state.f1[rows] = out1
    state.f2[rows] = out2
    return cache1, cache2


def closed_form_category(f, a, w, codes, alpha, beta, ridge=1e-8):
    """Rows ``C`` minimising ``alpha ||F - C A||^2 + beta ||C W - B||^2``."""
    gram = alpha * a @ a.T + beta * w @ w.T + ridge * np.eye(a.shape[0])
    rhs = alpha * a @ f.T + beta * w @ codes.T
    return np.linalg.solve(gram, rhs).T


def _category_step(state, a, cfg, rows):
    if cfg.c_update == "closed_form":
        for f, c, w in ((state.f1, state.c1, state.w1), (state.f2, state.c2, state.w2)):
            c[rows] = closed_form_category(
                f[rows], a, w, state.codes[rows], cfg.alpha, cfg.beta, cfg.ridge
            )
        return
    # gradient step of size 1/L, L = largest eigenvalue of the per-row Hessian
    grads = grad_category(state, a, cfg, rows)
    for c, w, grad in ((state.c1, state.w1, grads[0]), (state.c2, state.w2, grads[1])):
        hess = 2 * cfg.alpha * a @ a.T + 2 * cfg.beta * w @ w.T
        lip = float(np.linalg.eigvalsh(hess)[-1])
        if lip > 0:
            c[rows] -= grad / lip


def _projection_step(state, cfg):
    if cfg.w_update == "closed_form":
        state.w1 = closed_form_projection(state.c1, state.codes, cfg.ridge)
        state.w2 = closed_form_projection(state.c2, state.codes, cfg.ridge)
        return
    dw1, dw2 = grad_projection(state, cfg)
    for c, w, dw in ((state.c1, state.w1, dw1), (state.c2, state.w2, dw2)):
        lip = 2 * cfg.beta * float(np.linalg.eigvalsh(c.T @ c)[-1])
        if lip > 0:
            w -= dw / lip


def _code_step(state, cfg):
    before = quantization_loss(state)
    state.codes = update_codes(state, cfg)
    state.code_steps.append((before, quantization_loss(state)))


def _end_epoch(epoch, params1, params2, state, x1, x2, a, sims, cfg, callback, codes=True):
    state.f1 = encode_features(params1, x1)
    state.f2 = encode_features(params2, x2)
    if codes:
        _code_step(state, cfg)
    state.iteration = epoch
    loss = total_loss(state, sims, a, cfg)
    _check_finite(loss, epoch)
    state.history.append(loss)
    if callback is not None:
        callback(epoch, loss)


def _train_joint(params1, params2, state, x1, x2, a, sims, cfg, rng, callback):
    opt1 = Adam(params1.arrays(), cfg.learning_rate)
    opt2 = Adam(params2.arrays(), cfg.learning_rate)
    pack = _target_pack(sims, cfg)
    n = x1.shape[0]
    for epoch in range(1, cfg.iterations + 1):
        for rows in _batches(n, cfg, rng):
            cache1, cache2 = _forward_batch(state, params1, params2, x1, x2, rows, cfg, rng)
            _category_step(state, a, cfg, rows)
            _projection_step(state, cfg)
            g1, g2 = _feature_grads(state, pack, a, cfg.alpha, rows)
            for params, opt, cache, g in ((params1, opt1, cache1, g1), (params2, opt2, cache2, g2)):
                dws, dbs = backward(params, cache, g)
                opt.step([x for pair in zip(dws, dbs) for x in pair])
        _end_epoch(epoch, params1, params2, state, x1, x2, a, sims, cfg, callback)


def _train_staged(params1, params2, state, x1, x2, a, sims, cfg, rng, callback):
    """nJ: encoders on the similarity terms alone, then C/W, then B once."""
    pack = _target_pack(sims, cfg)
    opt1 = Adam(params1.arrays(), cfg.learning_rate)
    opt2 = Adam(params2.arrays(), cfg.learning_rate)
    n = x1.shape[0]
    for epoch in range(1, cfg.iterations + 1):
        for rows in _batches(n, cfg, rng):
            cache1, cache2 = _forward_batch(state, params1, params2, x1, x2, rows, cfg, rng)
            g1, g2 = _feature_grads(state, pack, a, 0.0, rows)
            for params, opt, cache, g in ((params1, opt1, cache1, g1), (params2, opt2, cache2, g2)):
                dws, dbs = backward(params, cache, g)
                opt.step([x for pair in zip(dws, dbs) for x in pair])
        last = epoch == cfg.iterations
        _end_epoch(epoch, params1, params2, state, x1, x2, a, sims, cfg, None if last else callback,
                   codes=False)
        if last:
            state.history.pop()

    state.c1 = least_squares_category(state.f1, a, cfg.ridge)
    state.c2 = least_squares_category(state.f2, a, cfg.ridge)
    # codes from the initial projections serve as regression targets for W
    state.codes = update_codes(state, cfg)
    state.w1 = closed_form_projection(state.c1, state.codes, cfg.ridge)
    state.w2 = closed_form_projection(state.c2, state.codes, cfg.ridge)
    _code_step(state, cfg)
    loss = total_loss(state, sims, a, cfg)
    _check_finite(loss, cfg.iterations)
    state.history.append(loss)
    if callback is not None:
        callback(cfg.iterations, loss)
