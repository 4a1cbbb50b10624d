"""Quality-regression head: a small MLP trained with hand-rolled backprop.

Architecture is input -> 256 -> 128 -> 1 with GELU and inverted dropout 0.1
after each hidden layer, optionally batch-normalizing the input features.
Training is minibatch SGD with L2 weight decay, cosine-annealed learning
rate, a stochastic-weight-averaging phase over the late epochs, and early
stopping on the validation selection metric. The loss is a weighted sum of
mean absolute error and a pairwise hinge rank penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)
from .metrics import krcc, rmse

HIDDEN_DIMS = (256, 128)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_MAGIC = "fragvqa-head 1"

SELECT_BY_RMSE = "byrmse"
SELECT_BY_KRCC = "bykrcc"


def gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


def gelu_grad(z: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return cdf + z * pdf


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _scores(pred, truth, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ShapeError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_n:
        raise InsufficientDataError(f"need at least {min_n} scores, got {p.size}")
    return p, t


def mae_loss(pred, truth) -> float:
    p, t = _scores(pred, truth, 1)
    return float(np.mean(np.abs(p - t)))


def _rank_parts(p: np.ndarray, t: np.ndarray):
    delta = np.abs(t[:, None] - t[None, :])
    e = np.where(t[:, None] >= t[None, :], 1.0, -1.0)
    d = p[:, None] - p[None, :]
    return delta, e, delta - e * d


def rank_loss(pred, truth) -> float:
    """Pairwise hinge penalty over ordered pairs, diagonal excluded."""
    p, t = _scores(pred, truth, 2)
    n = p.size
    _, _, slack = _rank_parts(p, t)
    terms = np.maximum(slack, 0.0)
    np.fill_diagonal(terms, 0.0)
    return float(terms.sum() / (n * (n - 1)))


def total_loss(pred, truth, l1_w: float, rank_w: float) -> float:
    value = l1_w * mae_loss(pred, truth)
    if rank_w != 0.0:
        value += rank_w * rank_loss(pred, truth)
    return float(value)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class MlpModel:
    """Fully-connected regressor; parameters live in a flat name->array dict."""

    def __init__(
        self,
        dims: list[int],
        seed: int | None = 0,
        rng: np.random.Generator | None = None,
        use_batch_norm: bool = False,
        dropout: float = 0.1,
    ):
        if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
            raise ConfigError(f"bad layer dims {dims}")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        self.dims = list(dims)
        self.use_batch_norm = use_batch_norm
        self.dropout = dropout
        if rng is None:
            rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for i in range(len(dims) - 1):
            bound = 1.0 / math.sqrt(dims[i])
            self.params[f"W{i}"] = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
            self.params[f"b{i}"] = rng.uniform(-bound, bound, size=dims[i + 1])
        if use_batch_norm:
            self.params["bn_gamma"] = np.ones(dims[0])
            self.params["bn_beta"] = np.zeros(dims[0])
        self.bn_mean = np.zeros(dims[0])
        self.bn_var = np.ones(dims[0])

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def trainable_names(self) -> list[str]:
        names = [f"{kind}{i}" for i in range(self.n_layers) for kind in ("W", "b")]
        if self.use_batch_norm:
            names += ["bn_gamma", "bn_beta"]
        return names

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def forward(self, x: np.ndarray, train: bool = False, rng=None):
        """Returns (predictions, cache). Dropout needs ``rng`` in train mode."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ShapeError(f"expected (n, {self.dims[0]}) input, got {x.shape}")
        cache: dict = {"inputs": [], "z": [], "masks": []}
        h = x
        if self.use_batch_norm:
            if train:
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                self.bn_mean = (1 - BN_MOMENTUM) * self.bn_mean + BN_MOMENTUM * mu
                self.bn_var = (1 - BN_MOMENTUM) * self.bn_var + BN_MOMENTUM * var
            else:
                mu, var = self.bn_mean, self.bn_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (h - mu) * inv_std
            h = self.params["bn_gamma"] * xhat + self.params["bn_beta"]
            cache["bn"] = (xhat, inv_std)
        for i in range(self.n_layers):
            cache["inputs"].append(h)
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            cache["z"].append(z)
            if i < self.n_layers - 1:
                a = gelu(z)
                if train and self.dropout > 0.0:
                    if rng is None:
                        raise ConfigError("train-mode forward needs an rng for dropout")
                    mask = (rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout)
                else:
                    mask = np.ones_like(a)
                cache["masks"].append(mask)
                h = a * mask
            else:
                h = z
        return h[:, 0], cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        pred, _ = self.forward(x, train=False)
        return pred


def loss_and_grads(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    l1_w: float,
    rank_w: float,
    dropout_rng=None,
    pair_mask: np.ndarray | None = None,
):
    """Total loss plus analytic gradients for every trainable parameter.

    ``pair_mask`` restricts which ordered pairs contribute to the rank term
    (the 1/(n(n-1)) normalization is kept); used by the gradient check to
    drop hinge-boundary pairs from both the analytic and numeric paths.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    train_mode = dropout_rng is not None
    pred, cache = model.forward(x, train=train_mode, rng=dropout_rng)
    n = y.size
    if pred.size != n:
        raise ShapeError(f"batch has {pred.size} predictions for {n} labels")

    diff = pred - y
    loss = l1_w * float(np.mean(np.abs(diff)))
    dpred = l1_w * np.sign(diff) / n
    if rank_w != 0.0 and n >= 2:
        _, e, slack = _rank_parts(pred, y)
        mask = ~np.eye(n, dtype=bool)
        if pair_mask is not None:
            mask &= pair_mask
        norm = n * (n - 1)
        loss += rank_w * float(np.where(mask, np.maximum(slack, 0.0), 0.0).sum() / norm)
        active = np.where(mask & (slack > 0.0), e, 0.0)
        dpred += rank_w * (active.sum(axis=0) - active.sum(axis=1)) / norm

    grads: dict[str, np.ndarray] = {}
    dz = dpred[:, None]
    for i in reversed(range(model.n_layers)):
        h_in = cache["inputs"][i]
        grads[f"W{i}"] = h_in.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ model.params[f"W{i}"].T
            da = dh * cache["masks"][i - 1]
            dz = da * gelu_grad(cache["z"][i - 1])
        elif model.use_batch_norm:
            dh = dz @ model.params[f"W{i}"].T
            xhat, _ = cache["bn"]
            grads["bn_gamma"] = (dh * xhat).sum(axis=0)
            grads["bn_beta"] = dh.sum(axis=0)
    return loss, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 0.0005
    batch_size: int = 256
    epochs: int = 120
    swa_lr: float = 0.05
    swa_start_fraction: float = 0.75
    patience: int = 5
    l1_w: float = 0.6
    rank_w: float = 1.0
    selection: str = SELECT_BY_RMSE
    seed: int = 0
    use_batch_norm: bool = False

    def __post_init__(self):
        # lr = 0 is allowed so a frozen model still exercises the stopping rule
        if self.lr < 0 or self.swa_lr <= 0:
            raise ConfigError("learning rates must be positive (lr may be 0)")
        if self.patience < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, epochs, batch_size must be >= 1")
        if self.l1_w < 0 or self.rank_w < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 < self.swa_start_fraction <= 1.0:
            raise ConfigError("swa_start_fraction must be in (0, 1]")
        if self.selection not in (SELECT_BY_RMSE, SELECT_BY_KRCC):
            raise ConfigError(f"unknown selection {self.selection!r}")


@dataclass
class TrainedHead:
    model: MlpModel
    config: TrainConfig
    selection_value: float
    best_epoch: int
    epochs_run: int
    swa_engaged: bool
    history: list[dict] = field(default_factory=list, repr=False)


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Annealed rate for 1-based ``epoch``; starts at base_lr, falls toward 0."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / epochs))


def _batches(n: int, batch_size: int, perm: np.ndarray) -> list[np.ndarray]:
    chunks = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size == 1:
        # a singleton batch has no rank pairs; fold it into its neighbor
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _val_metric(model_params, template: MlpModel, x_val, y_val, selection: str) -> float:
    saved = template.params
    template.params = model_params
    try:
        pred = template.predict(x_val)
    finally:
        template.params = saved
    if selection == SELECT_BY_RMSE:
        return rmse(pred, y_val)
    try:
        return krcc(pred, y_val)
    except Exception:
        return -1.0  # constant predictions rank worse than any real correlation


def _improved(value: float, best: float, selection: str) -> bool:
    if selection == SELECT_BY_RMSE:
        return value < best
    return value > best


def train(x_train, y_train, x_val, y_val, config: TrainConfig) -> TrainedHead:
    """Minibatch SGD with weight decay, cosine annealing, SWA, early stop."""
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).ravel()
    x_val = np.asarray(x_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64).ravel()
    if x_train.size == 0 or x_val.size == 0:
        raise InsufficientDataError("train and validation sets must be non-empty")
    if x_train.shape[0] != y_train.size or x_val.shape[0] != y_val.size:
        raise ShapeError("feature/label count mismatch")

    rng = np.random.default_rng(config.seed)
    dims = [x_train.shape[1], *HIDDEN_DIMS, 1]
    model = MlpModel(dims, rng=rng, use_batch_norm=config.use_batch_norm)
    swa_start = math.ceil(config.swa_start_fraction * config.epochs)
    names = model.trainable_names()

    swa_params: dict[str, np.ndarray] | None = None
    swa_count = 0
    worst = math.inf if config.selection == SELECT_BY_RMSE else -math.inf
    best_value = worst
    best_epoch = 0
    best_params = model.clone_params()
    bad_epochs = 0
    history: list[dict] = []
    epochs_run = 0

    for epoch in range(1, config.epochs + 1):
        epochs_run = epoch
        in_swa = epoch >= swa_start
        lr_e = config.swa_lr if in_swa else cosine_lr(config.lr, epoch, config.epochs)
        perm = rng.permutation(x_train.shape[0])
        epoch_losses = []
        for batch in _batches(x_train.shape[0], config.batch_size, perm):
            loss, grads = loss_and_grads(
                model, x_train[batch], y_train[batch],
                config.l1_w, config.rank_w, dropout_rng=rng,
            )
            if not math.isfinite(loss):
                raise DivergenceError(epoch, lr_e)
            for name in names:
                p = model.params[name]
                p -= lr_e * (grads[name] + config.weight_decay * p)
            epoch_losses.append(loss)

        if in_swa:
            if swa_params is None:
                swa_params = model.clone_params()
                swa_count = 1
            else:
                swa_count += 1
                for name, value in model.params.items():
                    swa_params[name] += (value - swa_params[name]) / swa_count

        candidate = swa_params if swa_params is not None else model.params
        val_value = _val_metric(candidate, model, x_val, y_val, config.selection)
        history.append(
            {
                "epoch": epoch,
                "lr": lr_e,
                "train_loss": float(np.mean(epoch_losses)),
                "val_metric": val_value,
            }
        )
        if _improved(val_value, best_value, config.selection):
            best_value = val_value
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in candidate.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    final_params = swa_params if swa_params is not None else best_params
    model.params = {k: v.copy() for k, v in final_params.items()}
    if swa_params is not None:
        best_value = _val_metric(model.params, model, x_val, y_val, config.selection)
    if best_epoch == 0:
        best_epoch = epochs_run
    return TrainedHead(
        model=model,
        config=config,
        selection_value=float(best_value),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        swa_engaged=swa_params is not None,
        history=history,
    )


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def gradient_check(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    l1_w: float,
    rank_w: float,
    step: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Pairs sitting within 10*step of the rank-loss hinge are excluded from
    both paths; the exclusion mask is frozen at the base point so each side
    differentiates the same function.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size < 2:
        raise InsufficientDataError("gradient check needs a batch of at least 2")
    pred0 = model.predict(x)
    _, _, slack0 = _rank_parts(pred0, y)
    include = ~np.eye(y.size, dtype=bool)
    include &= np.abs(slack0) >= 10.0 * step

    _, grads = loss_and_grads(model, x, y, l1_w, rank_w, pair_mask=include)

    coords = [
        (name, idx)
        for name in model.trainable_names()
        for idx in range(model.params[name].size)
    ]
    if max_coords is not None and len(coords) > max_coords:
        pick_rng = rng or np.random.default_rng(0)
        chosen = pick_rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in chosen]

    worst = 0.0
    for name, idx in coords:
        param = model.params[name]
        theta = param.flat[idx]
        param.flat[idx] = theta + step
        up, _ = loss_and_grads(model, x, y, l1_w, rank_w, pair_mask=include)
        param.flat[idx] = theta - step
        down, _ = loss_and_grads(model, x, y, l1_w, rank_w, pair_mask=include)
        param.flat[idx] = theta
        fd = (up - down) / (2.0 * step)
        analytic = grads[name].flat[idx]
        # the denominator floor must sit well above the finite-difference
        # noise floor (~eps / (2 * step) ~ 1e-12), or a vanishing gradient
        # reads as a large relative error
        err = abs(analytic - fd) / max(abs(analytic) + abs(fd), 1e-6)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: structured-text header + raw float32 little-endian weights
# ---------------------------------------------------------------------------


def _param_order(model: MlpModel) -> list[str]:
    order = []
    if model.use_batch_norm:
        order += ["bn_gamma", "bn_beta"]
    order += [f"{kind}{i}" for i in range(model.n_layers) for kind in ("W", "b")]
    return order


def save_checkpoint(
    path: str | Path,
    head: TrainedHead,
    config_hash: str = "-",
    layout: str = "-",
) -> None:
    model = head.model
    cfg = head.config
    lines = [
        CHECKPOINT_MAGIC,
        f"dims = {','.join(str(d) for d in model.dims)}",
        f"use_batch_norm = {str(model.use_batch_norm).lower()}",
        f"dropout = {repr(model.dropout)}",
        f"selection = {cfg.selection}",
        f"selection_value = {repr(head.selection_value)}",
        f"best_epoch = {head.best_epoch}",
        f"epochs_run = {head.epochs_run}",
        f"swa_engaged = {str(head.swa_engaged).lower()}",
        f"config_hash = {config_hash}",
        f"layout = {layout}",
    ]
    for name in (
        "lr", "weight_decay", "batch_size", "epochs", "swa_lr",
        "swa_start_fraction", "patience", "l1_w", "rank_w", "seed",
    ):
        lines.append(f"cfg_{name} = {repr(getattr(cfg, name))}")
    blobs = [model.params[name].astype("<f4").tobytes() for name in _param_order(model)]
    if model.use_batch_norm:
        blobs.append(model.bn_mean.astype("<f4").tobytes())
        blobs.append(model.bn_var.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode())
        fh.write(b"".join(blobs))


def load_checkpoint(path: str | Path) -> tuple[TrainedHead, dict[str, str]]:
    """Rebuild the trained head; also returns the raw header fields."""
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = raw[:sep].decode(errors="replace").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a head checkpoint")
    meta: dict[str, str] = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    try:
        dims = [int(d) for d in meta["dims"].split(",")]
        use_bn = meta["use_batch_norm"] == "true"
        config = TrainConfig(
            lr=float(meta["cfg_lr"]),
            weight_decay=float(meta["cfg_weight_decay"]),
            batch_size=int(meta["cfg_batch_size"]),
            epochs=int(meta["cfg_epochs"]),
            swa_lr=float(meta["cfg_swa_lr"]),
            swa_start_fraction=float(meta["cfg_swa_start_fraction"]),
            patience=int(meta["cfg_patience"]),
            l1_w=float(meta["cfg_l1_w"]),
            rank_w=float(meta["cfg_rank_w"]),
            selection=meta["selection"],
            seed=int(meta["cfg_seed"]),
            use_batch_norm=use_bn,
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from exc
    model = MlpModel(dims, seed=0, use_batch_norm=use_bn, dropout=float(meta["dropout"]))
    payload = raw[sep + 2 :]
    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + count * 4
        if end > len(payload):
            raise FormatError(f"{path}: weight payload truncated")
        arr = np.frombuffer(payload[offset:end], dtype="<f4").astype(np.float64)
        offset = end
        return arr.reshape(shape)

    for name in _param_order(model):
        model.params[name] = take(model.params[name].shape)
    if use_bn:
        model.bn_mean = take((dims[0],))
        model.bn_var = take((dims[0],))
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    head = TrainedHead(
        model=model,
        config=config,
        selection_value=float(meta["selection_value"]),
        best_epoch=int(meta["best_epoch"]),
        epochs_run=int(meta["epochs_run"]),
        swa_engaged=meta["swa_engaged"] == "true",
    )
    return head, meta
