"""Late-fusion two-branch network written directly in numpy.

An image branch (conv -> ReLU -> max-pool blocks, then a dense layer) and a
tabular branch (dense stack) each produce a feature vector; the two vectors
are concatenated and fed to a single dense head. Classification heads end in
a sigmoid, regression heads in a ReLU.

Every trainable tensor lives in one flat float64 vector (:class:`ModelParams`),
which makes L2 regularisation, Adam and finite-difference checks trivial.
Gradients are exact and computed by hand-written backward passes.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .balance import ClassWeights, inverse_log_transform, log_transform
from .metrics import accuracy, mae
from .raster import LANDCOVER, N_LANDCOVER_CLASSES, AugmentationConfig, RasterPatch, augment, ndvi, resize_patch

logger = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"
PROB_EPS = 1e-12

CHECKPOINT_MAGIC = b"ASDMCKPT"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    """Architecture of the two-branch network.

    ``image_shape`` is (channels, height, width). Each conv layer uses 'same'
    zero padding and is followed by ReLU and a ``pool`` x ``pool`` max-pool
    (trailing rows/cols that do not fill a window are dropped).
    ``log_target`` makes a regression model learn ln(1 + count) and return
    counts through the inverse transform.
    """

    image_shape: tuple[int, int, int] = (3, 8, 8)
    n_tabular: int = 10
    conv_channels: tuple[int, ...] = (8, 16)
    kernel: int = 3
    pool: int = 2
    img_features: int = 64
    tab_hidden: tuple[int, ...] = (32,)
    tab_features: int = 16
    task: str = REGRESSION
    log_target: bool = True
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "tab_hidden", tuple(int(v) for v in self.tab_hidden))
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"task must be {CLASSIFICATION!r} or {REGRESSION!r}, got {self.task!r}")
        if self.img_features < 1 or self.tab_features < 1:
            raise ValueError("branch feature sizes must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.pool < 1:
            raise ValueError(f"pool must be >= 1, got {self.pool}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        if self.n_tabular < 1:
            raise ValueError("n_tabular must be >= 1")
        if min(self.image_shape) < 1 or any(c < 1 for c in self.conv_channels + self.tab_hidden):
            raise ValueError("layer sizes must be positive")
        if self.flat_image_dim < 1:
            raise ValueError(f"image {self.image_shape[1:]} vanishes after "
                             f"{len(self.conv_channels)} pooling stages")

    @property
    def concat_dim(self) -> int:
        return self.img_features + self.tab_features

    @property
    def flat_image_dim(self) -> int:
        _, h, w = self.image_shape
        for _ in self.conv_channels:
            h, w = h // self.pool, w // self.pool
        c = self.conv_channels[-1] if self.conv_channels else self.image_shape[0]
        return c * h * w

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        c_in = self.image_shape[0]
        for i, c_out in enumerate(self.conv_channels):
            shapes += [(f"conv{i}.W", (c_out, c_in, self.kernel, self.kernel)), (f"conv{i}.b", (c_out,))]
            c_in = c_out
        shapes += [("img_fc.W", (self.img_features, self.flat_image_dim)), ("img_fc.b", (self.img_features,))]
        d_in = self.n_tabular
        for i, d_out in enumerate(self.tab_hidden):
            shapes += [(f"tab{i}.W", (d_out, d_in)), (f"tab{i}.b", (d_out,))]
            d_in = d_out
        shapes += [("tab_out.W", (self.tab_features, d_in)), ("tab_out.b", (self.tab_features,))]
        shapes += [("head.W", (1, self.concat_dim)), ("head.b", (1,))]
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


class ModelParams:
    """Named views into one flat parameter vector."""

    def __init__(self, layout: list[tuple[str, tuple[int, ...]]], flat: np.ndarray | None = None):
        self.layout = list(layout)
        self._slices = {}
        off = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self._slices[name] = (off, off + n, shape)
            off += n
        self.size = off
        if flat is None:
            flat = np.zeros(off)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (off,):
            raise ValueError(f"flat vector has shape {flat.shape}, layout needs ({off},)")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        a, b, shape = self._slices[name]
        return self.flat[a:b].reshape(shape)

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def names(self) -> list[str]:
        return [n for n, _ in self.layout]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.flat.copy())

    def sq_norm(self) -> float:
        return float(self.flat @ self.flat)


def init_params(cfg: FusionConfig) -> ModelParams:
    """He-normal weights, zero biases, seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    p = ModelParams(cfg.layout())
    for name, shape in cfg.layout():
        if name.endswith(".W"):
            fan_in = int(np.prod(shape[1:]))
            p[name][...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    return p


@dataclass
class Normalization:
    """Per-channel image and per-feature tabular standardisation constants."""

    img_mean: np.ndarray
    img_scale: np.ndarray
    tab_mean: np.ndarray
    tab_scale: np.ndarray

    @classmethod
    def identity(cls, cfg: FusionConfig) -> "Normalization":
        c = cfg.image_shape[0]
        return cls(np.zeros(c), np.ones(c), np.zeros(cfg.n_tabular), np.ones(cfg.n_tabular))

    @classmethod
    def fit(cls, images: np.ndarray, tabular: np.ndarray) -> "Normalization":
        img_mean = images.mean(axis=(0, 2, 3))
        img_scale = images.std(axis=(0, 2, 3))
        tab_mean = tabular.mean(axis=0)
        tab_scale = tabular.std(axis=0)
        img_scale[img_scale == 0] = 1.0
        tab_scale[tab_scale == 0] = 1.0
        return cls(img_mean, img_scale, tab_mean, tab_scale)

    def to_dict(self) -> dict:
        return {k: [float(x) for x in v] for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("img_mean", "img_scale", "tab_mean", "tab_scale")))


@dataclass
class FusionModel:
    config: FusionConfig
    params: ModelParams
    norm: Normalization

    @classmethod
    def create(cls, config: FusionConfig) -> "FusionModel":
        return cls(config, init_params(config), Normalization.identity(config))


# -- layers ---------------------------------------------------------------------

def _conv_forward(X, W, b):
    n, c, h, w = X.shape
    f, _, k, _ = W.shape
    p = k // 2
    Xp = np.pad(X, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(Xp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    out = cols @ W.reshape(f, -1).T + b
    return out.reshape(n, h, w, f).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, X_shape, W):
    n, c, h, w = X_shape
    f, _, k, _ = W.shape
    p = k // 2
    d = dout.transpose(0, 2, 3, 1).reshape(n * h * w, f)
    dW = (d.T @ cols).reshape(W.shape)
    db = d.sum(axis=0)
    dcols = (d @ W.reshape(f, -1)).reshape(n, h, w, c, k, k)
    dXp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            dXp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dXp[:, :, p:p + h, p:p + w], dW, db


def _pool_forward(X, s):
    n, c, h, w = X.shape
    ho, wo = h // s, w // s
    xr = X[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
    idx = np.argmax(xr, axis=-1)[..., None]
    return np.take_along_axis(xr, idx, axis=-1)[..., 0], idx


def _pool_backward(dout, idx, X_shape, s):
    n, c, h, w = X_shape
    ho, wo = h // s, w // s
    dxr = np.zeros((n, c, ho, wo, s * s))
    np.put_along_axis(dxr, idx, dout[..., None], axis=-1)
    dX = np.zeros(X_shape)
    dX[:, :, :ho * s, :wo * s] = dxr.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
    return dX


def _relu(x):
    return np.maximum(x, 0.0)


def _check_inputs(model: FusionModel, images: np.ndarray, tabular: np.ndarray):
    cfg = model.config
    if images.ndim != 4 or images.shape[1:] != cfg.image_shape:
        raise ValueError(f"layer conv0: expected images of shape (N, {', '.join(map(str, cfg.image_shape))}), "
                         f"got {images.shape}")
    if tabular.ndim != 2 or tabular.shape[1] != cfg.n_tabular:
        raise ValueError(f"layer {'tab0' if cfg.tab_hidden else 'tab_out'}: expected tabular input of shape "
                         f"(N, {cfg.n_tabular}), got {tabular.shape}")
    if len(images) != len(tabular):
        raise ValueError(f"{len(images)} images but {len(tabular)} tabular rows")


def _forward(model: FusionModel, images: np.ndarray, tabular: np.ndarray):
    """Pre-activation head output z (N,) plus everything backward needs."""
    cfg, P, nm = model.config, model.params, model.norm
    images = np.asarray(images, dtype=float)
    tabular = np.asarray(tabular, dtype=float)
    _check_inputs(model, images, tabular)
    cache: dict = {}

    x = (images - nm.img_mean[None, :, None, None]) / nm.img_scale[None, :, None, None]
    for i in range(len(cfg.conv_channels)):
        z, cols = _conv_forward(x, P[f"conv{i}.W"], P[f"conv{i}.b"])
        a = _relu(z)
        pooled, idx = _pool_forward(a, cfg.pool)
        cache[f"conv{i}"] = (x.shape, cols, z, a.shape, idx)
        x = pooled
    cache["flat_shape"] = x.shape
    flat = x.reshape(len(x), -1)
    z_img = flat @ P["img_fc.W"].T + P["img_fc.b"]
    f_img = _relu(z_img)
    cache["img_fc"] = (flat, z_img)

    t = (tabular - nm.tab_mean) / nm.tab_scale
    for i in range(len(cfg.tab_hidden)):
        z = t @ P[f"tab{i}.W"].T + P[f"tab{i}.b"]
        cache[f"tab{i}"] = (t, z)
        t = _relu(z)
    z_tab = t @ P["tab_out.W"].T + P["tab_out.b"]
    f_tab = _relu(z_tab)
    cache["tab_out"] = (t, z_tab)

    concat = np.concatenate([f_img, f_tab], axis=1)
    z_out = (concat @ P["head.W"].T + P["head.b"])[:, 0]
    cache["head"] = concat
    return z_out, cache


def _backward(model: FusionModel, cache: dict, dz_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(dz_out * z_out) w.r.t. the flat parameter vector."""
    cfg, P = model.config, model.params
    G = ModelParams(P.layout)
    concat = cache["head"]
    dz = dz_out[:, None]
    G["head.W"][...] = dz.T @ concat
    G["head.b"][...] = dz.sum(axis=0)
    dconcat = dz @ P["head.W"]
    df_img, df_tab = dconcat[:, :cfg.img_features], dconcat[:, cfg.img_features:]

    t, z_tab = cache["tab_out"]
    dz = df_tab * (z_tab > 0)
    G["tab_out.W"][...] = dz.T @ t
    G["tab_out.b"][...] = dz.sum(axis=0)
    dt = dz @ P["tab_out.W"]
    for i in reversed(range(len(cfg.tab_hidden))):
        t_in, z = cache[f"tab{i}"]
        dz = dt * (z > 0)
        G[f"tab{i}.W"][...] = dz.T @ t_in
        G[f"tab{i}.b"][...] = dz.sum(axis=0)
        dt = dz @ P[f"tab{i}.W"]

    flat, z_img = cache["img_fc"]
    dz = df_img * (z_img > 0)
    G["img_fc.W"][...] = dz.T @ flat
    G["img_fc.b"][...] = dz.sum(axis=0)
    dx = (dz @ P["img_fc.W"]).reshape(cache["flat_shape"])
    for i in reversed(range(len(cfg.conv_channels))):
        x_shape, cols, z, a_shape, idx = cache[f"conv{i}"]
        da = _pool_backward(dx, idx, a_shape, cfg.pool)
        dzc = da * (z > 0)
        dx, dW, db = _conv_backward(dzc, cols, x_shape, P[f"conv{i}.W"])
        G[f"conv{i}.W"][...] = dW
        G[f"conv{i}.b"][...] = db
    return G.flat


def concat_features(model: FusionModel, images, tabular) -> np.ndarray:
    """The fused (N, F_img + F_tab) feature matrix fed to the head."""
    return _forward(model, images, tabular)[1]["head"]


def forward(model: FusionModel, images, tabular) -> np.ndarray:
    """Head output: probabilities for classification, model-space values
    (log1p counts when ``log_target``) for regression."""
    z, _ = _forward(model, images, tabular)
    return expit(z) if model.config.task == CLASSIFICATION else _relu(z)


def predict(model: FusionModel, images, tabular) -> np.ndarray:
    """Probabilities (classification) or counts (regression)."""
    out = forward(model, images, tabular)
    if model.config.task == REGRESSION and model.config.log_target:
        return inverse_log_transform(out)
    return out


# -- losses -----------------------------------------------------------------------

def bce_loss(y, p) -> float:
    """Mean binary cross-entropy with p clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.size == 0:
        raise ValueError("bce_loss on empty input")
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {p.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def msle_loss(y, yhat) -> float:
    """Mean squared logarithmic error (1/N) sum (ln(y+1) - ln(yhat+1))^2."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.size == 0:
        raise ValueError("msle_loss on empty input")
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yhat.shape}")
    if np.any(y < 0) or np.any(yhat < 0):
        raise ValueError("msle_loss needs non-negative inputs")
    return float(np.mean((np.log1p(y) - np.log1p(yhat)) ** 2))


def total_loss(base_loss: float, weight: float, params: ModelParams | np.ndarray,
               l2_lambda: float) -> float:
    """weight * base_loss + l2_lambda * ||params||^2."""
    flat = params.flat if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    return float(weight * base_loss + l2_lambda * (flat @ flat))


def _targets_in_model_space(cfg: FusionConfig, y: np.ndarray) -> np.ndarray:
    if cfg.task == REGRESSION and cfg.log_target:
        return log_transform(y)
    return y


def loss_and_grad(model: FusionModel, images, tabular, y, sample_weights=None) -> tuple[float, np.ndarray]:
    """Weighted mean per-sample loss plus L2 penalty, and its exact gradient.

    Per-sample losses are BCE for classification and squared error in model
    space for regression; with ``log_target`` the latter is the squared log
    error of the counts, i.e. MSLE. ``sample_weights`` default to 1.
    """
    cfg = model.config
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    z, cache = _forward(model, images, tabular)
    if cfg.task == CLASSIFICATION:
        p = expit(z)
        pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        per = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
        # the clamp is flat, so clamped samples contribute no gradient
        dz = np.where(pc == p, p - y, 0.0)
    else:
        t = _targets_in_model_space(cfg, y)
        pred = _relu(z)
        per = (pred - t) ** 2
        dz = 2.0 * (pred - t) * (z > 0)
    lam = cfg.l2_lambda
    loss = float(np.mean(w * per)) + lam * model.params.sq_norm()
    grad = _backward(model, cache, w * dz / n) + 2.0 * lam * model.params.flat
    return loss, grad


# -- optimisation -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-4
    lr_target: float = 3e-3
    warmup_steps: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 32
    class_weights: ClassWeights | None = None
    augmentation: AugmentationConfig | None = None
    init_output_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_init <= self.lr_target:
            raise ValueError(f"need 0 < lr_init <= lr_target, got {self.lr_init}, {self.lr_target}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up from lr_init to lr_target, constant afterwards."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.lr_target
    return cfg.lr_init + (cfg.lr_target - cfg.lr_init) * step / cfg.warmup_steps


@dataclass
class FusionDataset:
    images: np.ndarray      # (N, C, H, W)
    tabular: np.ndarray     # (N, F)
    targets: np.ndarray     # counts or 0/1 labels
    countries: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.tabular = np.asarray(self.tabular, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        n = len(self.targets)
        if len(self.images) != n or len(self.tabular) != n:
            raise ValueError("images, tabular and targets must have equal length")
        if self.countries and len(self.countries) != n:
            raise ValueError("countries must match targets in length")

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "FusionDataset":
        idx = np.asarray(idx, dtype=int)
        countries = [self.countries[i] for i in idx] if self.countries else []
        return FusionDataset(self.images[idx], self.tabular[idx], self.targets[idx], countries)


@dataclass
class EpochRecord:
    epoch: int
    train_metric: float
    test_metric: float
    loss: float


@dataclass
class TrainResult:
    model: FusionModel
    trace: list[EpochRecord]


def task_metric(model: FusionModel, data: FusionDataset) -> float:
    """MAE on raw counts (regression) or accuracy at 0.5 (classification)."""
    out = predict(model, data.images, data.tabular)
    if model.config.task == REGRESSION:
        return mae(data.targets, out)
    return accuracy(data.targets, out)


def _augment_batch(images: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    names = tuple(f"c{i}" for i in range(images.shape[1]))
    h, w = images.shape[2:]
    out = np.empty_like(images)
    for i, img in enumerate(images):
        a = augment(RasterPatch(names, img), cfg, rng)
        out[i] = resize_patch(a, h, w).pixels
    return out


def _init_output_bias(model: FusionModel, data: FusionDataset):
    cfg = model.config
    b = model.params["head.b"]
    if cfg.task == REGRESSION:
        b[...] = float(np.mean(_targets_in_model_space(cfg, data.targets)))
    else:
        rate = float(np.clip(np.mean(data.targets), 1e-3, 1 - 1e-3))
        b[...] = math.log(rate / (1 - rate))


def train(model: FusionModel, data: FusionDataset, cfg: TrainConfig,
          test: FusionDataset | None = None, fit_normalization: bool = True) -> TrainResult:
    """Mini-batch Adam with the warm-up schedule of :func:`lr_at`.

    Each sample's loss is scaled by ``cfg.class_weights[country]`` when class
    weights are given. The model passed in is not modified.

    Raises:
        TrainingDiverged: when the loss or parameters become non-finite.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    mcfg = model.config
    if mcfg.task == CLASSIFICATION and not np.all(np.isin(data.targets, (0.0, 1.0))):
        raise ValueError("classification targets must be 0/1")
    if mcfg.task == REGRESSION and np.any(data.targets < 0):
        raise ValueError("regression targets must be non-negative")

    model = FusionModel(mcfg, model.params.copy(), model.norm)
    if fit_normalization:
        model.norm = Normalization.fit(data.images, data.tabular)
    if cfg.init_output_bias:
        _init_output_bias(model, data)

    if cfg.class_weights is not None:
        if not data.countries:
            raise ValueError("class weights given but dataset has no countries")
        weights = cfg.class_weights.for_samples(data.countries)
    else:
        weights = np.ones(len(data))

    rng = np.random.default_rng(cfg.seed)
    theta = model.params.flat
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    trace: list[EpochRecord] = []
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        images = data.images
        if cfg.augmentation is not None:
            images = _augment_batch(images, cfg.augmentation, rng)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_and_grad(model, images[idx], data.tabular[idx], data.targets[idx], weights[idx])
            if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch}, step {step} "
                                       f"(loss={loss}, lr={lr_at(step, cfg):.3g})")
            lr = lr_at(step, cfg)
            step += 1
            m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g
            v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g
            m_hat = m / (1 - cfg.adam_beta1 ** step)
            v_hat = v / (1 - cfg.adam_beta2 ** step)
            theta -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            losses.append(loss)
        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        rec = EpochRecord(epoch, task_metric(model, data),
                          task_metric(model, test) if test is not None and len(test) else float("nan"),
                          float(np.mean(losses)))
        trace.append(rec)
        logger.debug("epoch %d: train %.4f test %.4f loss %.5f", epoch, rec.train_metric, rec.test_metric, rec.loss)
    return TrainResult(model, trace)


def write_trace_csv(trace: Sequence[EpochRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_metric,test_metric,loss\n")
        for r in trace:
            fh.write(f"{r.epoch},{r.train_metric!r},{r.test_metric!r},{r.loss!r}\n")


# -- inputs from cell samples ----------------------------------------------------

def modality_tensor(patches: dict[str, RasterPatch], modality: str, size: tuple[int, int] | None = None) -> np.ndarray:
    """(C, H, W) network input for one cell.

    ``RGB`` uses the red/green/blue bands, ``LC`` one-hot encodes the
    landcover classes into 10 channels, ``NDVI`` is computed from the RGB
    patch's nir/red bands unless an ``NDVI`` patch is present. Patches are
    resized to ``size`` if given.
    """
    modality = modality.upper()
    if modality == "RGB":
        patch = patches["RGB"].select("red", "green", "blue")
    elif modality == "LC":
        patch = patches["LC"].select(LANDCOVER)
    elif modality == "NDVI":
        patch = patches["NDVI"] if "NDVI" in patches else ndvi(patches["RGB"])
    else:
        raise ValueError(f"unknown modality {modality!r}")
    if size is not None:
        patch = resize_patch(patch, *size)
    if modality == "LC":
        lc = patch.band(LANDCOVER).astype(int)
        return (np.arange(N_LANDCOVER_CLASSES)[:, None, None] == lc[None]).astype(float)
    return patch.pixels.copy()


def modality_channels(modality: str) -> int:
    return {"RGB": 3, "LC": N_LANDCOVER_CLASSES, "NDVI": 1}[modality.upper()]


def build_dataset(samples, modality: str, task: str = REGRESSION,
                  size: tuple[int, int] | None = None) -> FusionDataset:
    """Stack cell samples (with covariates and patches attached) into arrays."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    missing = [s.key for s in samples if s.covariates is None]
    if missing:
        raise ValueError(f"{len(missing)} samples lack covariates, e.g. cell {missing[0]}")
    images = np.stack([modality_tensor(s.patches, modality, size) for s in samples])
    tabular = np.array([s.covariates.values for s in samples])
    if task == CLASSIFICATION:
        targets = np.array([1.0 if s.label_presence else 0.0 for s in samples])
    else:
        targets = np.array([float(s.count) for s in samples])
    return FusionDataset(images, tabular, targets, [s.country for s in samples])


# -- checkpoints --------------------------------------------------------------------

def save_model(model: FusionModel, path) -> None:
    """Binary checkpoint: magic, u32 version, u32 header length, JSON header
    (config + normalisation), u64 parameter count, little-endian float64
    parameters."""
    header = json.dumps({"config": model.config.to_dict(), "norm": model.norm.to_dict()},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", model.params.size))
        fh.write(model.params.flat.astype("<f8").tobytes())


def load_model(path) -> FusionModel:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    cfg = FusionConfig.from_dict(header["config"])
    (n,) = struct.unpack_from("<Q", data, 16 + hlen)
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=24 + hlen).astype(np.float64)
    params = ModelParams(cfg.layout(), flat)
    return FusionModel(cfg, params, Normalization.from_dict(header["norm"]))
