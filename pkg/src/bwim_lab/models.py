"""The causal temporal-convolution overload classifier, two baselines, and training."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import SampleSet
from .errors import ConfigError, NumericalError
from .evaluation import prf1
from .neural import ParameterStore, Tensor, adam_step, bce_loss, conv1d_causal, conv1d_pointwise, dense_sigmoid
from .neural.tensor import linear, relu, take_last

log = logging.getLogger(__name__)

THRESHOLD_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class DoviConfig:
    """Network and training hyper-parameters (defaults from the published setup)."""

    l: int = 8  # window length
    c: int = 3  # stacked temporal layers
    s: int = 3  # temporal filter size
    k: int = 64  # filters per layer
    lr: float = 0.002
    batch_size: int = 128
    epochs: int = 50
    threshold: float = 0.5
    tune_threshold: bool = False
    activation: str = "relu"
    seed: int = 0
    patience: int | None = None  # stop after this many epochs without a better val F1

    def __post_init__(self) -> None:
        if not self.l >= self.s >= 1:
            raise ConfigError("need l >= s >= 1")
        if self.k < 1 or self.c < 1:
            raise ConfigError("need k >= 1 and c >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Classifier:
    """Shared plumbing: a parameter store, batched scoring, and a checkpoint config."""

    kind = "base"

    def __init__(self, n_sensors: int, config: DoviConfig):
        self.n_sensors = n_sensors
        self.config = config
        self.store = ParameterStore(self._init_params(np.random.default_rng([config.seed, 0])))

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        raise NotImplementedError

    def forward(self, X) -> Tensor:
        raise NotImplementedError

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-2:] != (self.config.l, self.n_sensors):
            raise ValueError(
                f"expected windows of shape ({self.config.l}, {self.n_sensors}), got {X.shape[-2:]}"
            )
        return X

    def scores(self, X: np.ndarray, batch: int = 4096) -> np.ndarray:
        X = self._check(X)
        single = X.ndim == 2
        if single:
            X = X[None]
        out = np.concatenate([self.forward(X[i:i + batch]).data for i in range(0, len(X), batch)]) \
            if len(X) else np.zeros(0)
        return out[0] if single else out

    def describe(self) -> dict:
        return {"kind": self.kind, "n_sensors": self.n_sensors, **asdict(self.config)}


class DoviModel(Classifier):
    """Pointwise feature map -> ``c`` causal temporal convs -> sigmoid on the last step."""

    kind = "dovi"

    def _init_params(self, rng):
        cfg, n = self.config, self.n_sensors
        p = {
            "map.filters": _he_uniform(rng, (cfg.k, n), n),
            "map.bias": np.zeros(cfg.k),
        }
        for i in range(cfg.c):
            p[f"tcn{i}.filters"] = _he_uniform(rng, (cfg.k, cfg.s * cfg.k), cfg.s * cfg.k)
            p[f"tcn{i}.bias"] = np.zeros(cfg.k)
        p["head.w"] = _he_uniform(rng, (cfg.k,), cfg.k)
        p["head.b"] = np.zeros(1)
        return {name: Tensor(v, name=name) for name, v in p.items()}

    def forward(self, X, full: bool = False) -> Tensor:
        """Scores from the last time step.

        Only the receptive field of that step is evaluated: layer ``i`` keeps
        its last ``1 + (c-1-i)(s-1)`` positions. ``full=True`` runs every
        layer over the whole window instead; the scores agree.
        """
        P, cfg = self.store, self.config
        X = self._check(X)
        if not full:
            X = X[..., max(0, cfg.l - 1 - cfg.c * (cfg.s - 1)):, :]
        h = conv1d_pointwise(X, P["map.filters"], P["map.bias"])
        for i in range(cfg.c):
            keep = None if full else min(h.shape[-2], 1 + (cfg.c - 1 - i) * (cfg.s - 1))
            h = conv1d_causal(h, P[f"tcn{i}.filters"], P[f"tcn{i}.bias"], cfg.activation, keep)
        return dense_sigmoid(take_last(h), P["head.w"], P["head.b"])


def dovi_forward(model: DoviModel, X: np.ndarray) -> float | np.ndarray:
    """Score in (0, 1) for one window (l, n) or a batch (B, l, n)."""
    return model.scores(X)


class LogisticRegression(Classifier):
    kind = "lr"

    def _init_params(self, rng):
        d = self.config.l * self.n_sensors
        return {"w": Tensor(np.zeros(d), name="w"), "b": Tensor(np.zeros(1), name="b")}

    def forward(self, X) -> Tensor:
        X = self._check(X)
        flat = Tensor(X.reshape(len(X), -1))
        return dense_sigmoid(flat, self.store["w"], self.store["b"])


class MLP(Classifier):
    kind = "mlp"
    hidden = (64, 64)

    def _init_params(self, rng):
        d = self.config.l * self.n_sensors
        p = {}
        for i, h in enumerate(self.hidden):
            p[f"fc{i}.W"] = _he_uniform(rng, (h, d), d)
            p[f"fc{i}.b"] = np.zeros(h)
            d = h
        p["head.w"] = _he_uniform(rng, (d,), d)
        p["head.b"] = np.zeros(1)
        return {name: Tensor(v, name=name) for name, v in p.items()}

    def forward(self, X) -> Tensor:
        X = self._check(X)
        h = Tensor(X.reshape(len(X), -1))
        for i in range(len(self.hidden)):
            h = relu(linear(h, self.store[f"fc{i}.W"], self.store[f"fc{i}.b"]))
        return dense_sigmoid(h, self.store["head.w"], self.store["head.b"])


MODEL_KINDS: dict[str, type[Classifier]] = {"dovi": DoviModel, "lr": LogisticRegression, "mlp": MLP}


def make_model(kind: str, n_sensors: int, config: DoviConfig) -> Classifier:
    try:
        return MODEL_KINDS[kind](n_sensors, config)
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None


def predict_label(score, threshold: float):
    """1 where ``score > threshold`` (strict)."""
    out = np.asarray(score) > threshold
    return out.astype(np.int8) if out.ndim else int(out)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    threshold: float = 0.5
    f1_val: float | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch,
                "threshold": self.threshold, "f1_val": self.f1_val, "wall_time": self.wall_time}


def pick_threshold(scores: np.ndarray, labels: np.ndarray, config: DoviConfig) -> tuple[float, float]:
    """Threshold and its F1 on (validation) data; the grid is searched only if enabled."""
    if not config.tune_threshold:
        return config.threshold, prf1(predict_label(scores, config.threshold), labels).f1
    best_t, best_f1 = config.threshold, -1.0
    for t in THRESHOLD_GRID:
        f1 = prf1(predict_label(scores, t), labels).f1
        # Ties go to the threshold nearest the default.
        if f1 > best_f1 or (f1 == best_f1 and abs(t - config.threshold) < abs(best_t - config.threshold)):
            best_t, best_f1 = t, f1
    return best_t, best_f1


def train(model: Classifier, train_set: SampleSet, val_set: SampleSet) -> TrainReport:
    """Mini-batch Adam on cross entropy, keeping the parameters of the best validation epoch.

    Batches are reshuffled every epoch from a stream seeded by the config
    seed, so a run is fully determined by its inputs.
    """
    cfg = model.config
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation splits must be nonempty")
    if train_set.window_length != cfg.l:
        raise ConfigError(f"samples have window {train_set.window_length}, model expects {cfg.l}")
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainReport(threshold=cfg.threshold)
    start = time.perf_counter()
    best = None
    X, y = train_set.windows, train_set.labels.astype(np.float64)
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            model.store.zero_grad()
            loss = bce_loss(model.forward(X[idx]), y[idx])
            try:
                loss.backward()
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from exc
            adam_step(model.store, model.store.grads(), cfg.lr)
            total += float(loss.data) * len(idx)
        train_loss = total / len(order)
        if not np.isfinite(train_loss):
            raise NumericalError(f"training loss diverged at epoch {epoch}")
        threshold, f1 = pick_threshold(model.scores(val_set.windows), val_set.labels, cfg)
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_f1": f1,
                              "threshold": threshold})
        log.info("%s epoch %d loss %.5f val F1 %.4f", model.kind, epoch, train_loss, f1)
        if best is None or f1 > best[0]:
            best = (f1, epoch, threshold, model.store.snapshot())
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    if best is not None:
        f1, report.best_epoch, report.threshold, params = best
        report.f1_val = f1
        model.store.load(params)
    report.wall_time = time.perf_counter() - start
    return report


def baseline_lr(train_set: SampleSet, val_set: SampleSet, config: DoviConfig) -> tuple[LogisticRegression, TrainReport]:
    model = LogisticRegression(train_set.windows.shape[2], config)
    return model, train(model, train_set, val_set)


def baseline_mlp(train_set: SampleSet, val_set: SampleSet, config: DoviConfig) -> tuple[MLP, TrainReport]:
    model = MLP(train_set.windows.shape[2], config)
    return model, train(model, train_set, val_set)


def with_seed(config: DoviConfig, seed: int) -> DoviConfig:
    return replace(config, seed=seed)
