"""Training protocols: baseline multi-head network, autoencoder pre-training,
and frozen/unfrozen fine-tuning, all with early stopping and best-weight
restoration.

Training is deterministic under the config seed: fixed initialisation order,
fixed batch composition (shuffling is off by default to preserve the block
structure of the data), and a single generator driving dropout.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import jsonio, nn_core
from .data_model import SplitAssignment, TabularDataset
from .masked_loss import MaskedBatch, combined_loss, masked_bce, masked_mse
from .nn_core import AdamState, DenseLayer, LayerSpec, NetworkParams
from .preprocess import split_blocks

MODEL_KINDS = ("baseline", "pretrained-frozen", "pretrained-unfrozen")


@dataclass
class AEConfig:
    """Autoencoder pre-training hyperparameters."""

    encoder_dims: tuple[int, ...] = (512, 256, 128)
    dropout: float = 0.2
    lr: float = 1e-3
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    holdout_fraction: float = 0.2
    include_test_rows: bool = False  # reconstruction may legitimately see test X

    def to_dict(self) -> dict:
        return {
            "encoder_dims": list(self.encoder_dims),
            "dropout": self.dropout,
            "lr": self.lr,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "holdout_fraction": self.holdout_fraction,
            "include_test_rows": self.include_test_rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AEConfig":
        base = cls()
        return cls(
            encoder_dims=tuple(d.get("encoder_dims", base.encoder_dims)),
            dropout=float(d.get("dropout", base.dropout)),
            lr=float(d.get("lr", base.lr)),
            max_epochs=int(d.get("max_epochs", base.max_epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            patience=int(d.get("patience", base.patience)),
            holdout_fraction=float(d.get("holdout_fraction", base.holdout_fraction)),
            include_test_rows=bool(d.get("include_test_rows", base.include_test_rows)),
        )


@dataclass
class TrainConfig:
    """Supervised training hyperparameters; defaults follow the reference protocol."""

    hidden_dims: tuple[int, ...] = (128, 64)
    dropout: float = 0.2
    lr: float = 1e-3
    max_epochs: int = 500
    batch_size: int = 32
    patience: int = 25
    shuffle: bool = False
    loss_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    ae: AEConfig = field(default_factory=AEConfig)
    finetune_mode: str = "unfrozen"

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0,1), got {self.dropout}")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.finetune_mode not in ("frozen", "unfrozen"):
            raise ValueError(f"unknown finetune_mode {self.finetune_mode!r}")

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "hidden_dims": list(self.hidden_dims),
            "dropout": self.dropout,
            "lr": self.lr,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "shuffle": self.shuffle,
            "loss_weights": list(self.loss_weights),
            "seed": self.seed,
            "ae": self.ae.to_dict(),
            "finetune_mode": self.finetune_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        base = cls()
        return cls(
            hidden_dims=tuple(d.get("hidden_dims", base.hidden_dims)),
            dropout=float(d.get("dropout", base.dropout)),
            lr=float(d.get("lr", base.lr)),
            max_epochs=int(d.get("max_epochs", base.max_epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            patience=int(d.get("patience", base.patience)),
            shuffle=bool(d.get("shuffle", base.shuffle)),
            loss_weights=tuple(d.get("loss_weights", base.loss_weights)),
            seed=int(d.get("seed", base.seed)),
            ae=AEConfig.from_dict(d.get("ae", {})),
            finetune_mode=d.get("finetune_mode", base.finetune_mode),
        )


@dataclass
class TrainHistory:
    """Per-epoch losses plus where training stopped and which epoch won."""

    train_mse: list[float] = field(default_factory=list)
    train_bce: list[float] = field(default_factory=list)
    train_combined: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_bce: list[float] = field(default_factory=list)
    val_combined: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    @property
    def best_val_loss(self) -> float:
        return self.val_combined[self.best_epoch]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "train_mse": self.train_mse,
            "train_bce": self.train_bce,
            "train_combined": self.train_combined,
            "val_mse": self.val_mse,
            "val_bce": self.val_bce,
            "val_combined": self.val_combined,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
        }

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _supervised_losses(
    params: NetworkParams,
    X: np.ndarray,
    y_cont: np.ndarray,
    y_bin: np.ndarray,
    m: np.ndarray,
    weights: tuple[float, float],
) -> tuple[float, float, float]:
    out, _ = nn_core.forward(params, X, mode="infer")
    mse, _ = masked_mse(MaskedBatch(y=y_cont, y_hat=out["cont"], m=m))
    bce, _ = masked_bce(MaskedBatch(y=y_bin, y_hat=out["bin"], m=m))
    return weights[0] * mse + weights[1] * bce, mse, bce


def _zero_layer_grads(layers: list[DenseLayer]) -> None:
    for layer in layers:
        layer.W[:] = 0.0
        layer.b[:] = 0.0


def _train_supervised(
    params: NetworkParams,
    ds: TabularDataset,
    split: SplitAssignment,
    cfg: TrainConfig,
    rng: np.random.Generator,
    freeze_backbone: bool = False,
) -> tuple[NetworkParams, TrainHistory]:
    fit_rows = split.fit_rows
    val_rows = split.val_rows
    if val_rows.size == 0:
        raise ValueError("empty validation set")
    if fit_rows.size == 0:
        raise ValueError("no training rows left after the validation holdout")

    X_fit, X_val = ds.X[fit_rows], ds.X[val_rows]
    yc_fit, yb_fit, m_fit = ds.Y_cont[fit_rows], ds.Y_bin[fit_rows], ds.M[fit_rows]
    yc_val, yb_val, m_val = ds.Y_cont[val_rows], ds.Y_bin[val_rows], ds.M[val_rows]

    state = AdamState.for_params(params, learning_rate=cfg.lr)
    history = TrainHistory()
    best_params = params.copy()
    best_val = np.inf
    wait = 0
    base_order = np.arange(fit_rows.size)

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(fit_rows.size) if cfg.shuffle else base_order
        ep_mse = ep_bce = ep_comb = 0.0
        for batch in _batches(fit_rows.size, cfg.batch_size, order):
            out, cache = nn_core.forward(params, X_fit[batch], mode="train", rng=rng)
            total, g_cont, g_bin = combined_loss(
                MaskedBatch(y=yc_fit[batch], y_hat=out["cont"], m=m_fit[batch]),
                MaskedBatch(y=yb_fit[batch], y_hat=out["bin"], m=m_fit[batch]),
                weights=cfg.loss_weights,
            )
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}: {total!r}"
                )
            grads = nn_core.backward(params, cache, {"cont": g_cont, "bin": g_bin})
            if freeze_backbone:
                _zero_layer_grads(grads.backbone)
            nn_core.adam_step(params, grads, state)
            mse, _ = masked_mse(MaskedBatch(y=yc_fit[batch], y_hat=out["cont"], m=m_fit[batch]))
            bce, _ = masked_bce(MaskedBatch(y=yb_fit[batch], y_hat=out["bin"], m=m_fit[batch]))
            w = batch.size / fit_rows.size
            ep_mse += w * mse
            ep_bce += w * bce
            ep_comb += w * total

        val_comb, val_mse, val_bce = _supervised_losses(
            params, X_val, yc_val, yb_val, m_val, cfg.loss_weights
        )
        if not np.isfinite(val_comb):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        history.train_mse.append(ep_mse)
        history.train_bce.append(ep_bce)
        history.train_combined.append(ep_comb)
        history.val_mse.append(val_mse)
        history.val_bce.append(val_bce)
        history.val_combined.append(val_comb)
        history.stopped_epoch = epoch

        if val_comb < best_val:
            best_val = val_comb
            history.best_epoch = epoch
            best_params = params.copy()
            wait = 0
        else:
            wait += 1
            if wait >= max(cfg.patience, 1):
                break

    return best_params, history


def _supervised_network(
    input_dim: int, n_responses: int, cfg: TrainConfig, rng: np.random.Generator
) -> NetworkParams:
    dims = (input_dim,) + tuple(cfg.hidden_dims)
    backbone = [
        LayerSpec(in_dim=dims[i], out_dim=dims[i + 1], activation="relu", dropout_rate=cfg.dropout)
        for i in range(len(cfg.hidden_dims))
    ]
    heads = {
        "cont": [LayerSpec(in_dim=dims[-1], out_dim=n_responses, activation="relu")],
        "bin": [LayerSpec(in_dim=dims[-1], out_dim=n_responses, activation="sigmoid")],
    }
    return nn_core.init_network(backbone, heads, rng)


def train_baseline(
    ds: TabularDataset, split: SplitAssignment, cfg: TrainConfig
) -> tuple[NetworkParams, TrainHistory]:
    """Train the shared-backbone two-head network from scratch."""
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    params = _supervised_network(ds.n_features, ds.n_responses, cfg, rng)
    return _train_supervised(params, ds, split, cfg, rng)


def pretrain_autoencoder(
    X: np.ndarray,
    cfg: AEConfig,
    seed: int = 0,
    blocks: np.ndarray | None = None,
) -> tuple[list[DenseLayer], TrainHistory]:
    """Unsupervised reconstruction pre-training; returns the encoder only.

    The decoder mirrors the encoder (linear output) and is discarded. Early
    stopping watches plain reconstruction MSE on a holdout of rows, block-aware
    when block labels are supplied.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    rng = np.random.default_rng(np.random.PCG64(seed))
    if blocks is not None and len(set(blocks)) >= 3:
        dummy = np.zeros((n, 1))
        holdout = split_blocks(
            blocks, dummy, np.ones((n, 1)),
            test_fraction=cfg.holdout_fraction, val_fraction_of_train=0.0, seed=seed,
        )
        fit_rows, val_rows = holdout.train_rows, holdout.test_rows
    else:
        order = rng.permutation(n)
        n_val = max(1, int(round(cfg.holdout_fraction * n)))
        val_rows, fit_rows = np.sort(order[:n_val]), np.sort(order[n_val:])
    if fit_rows.size == 0 or val_rows.size == 0:
        raise ValueError("autoencoder holdout left an empty partition")

    dims = (p,) + tuple(cfg.encoder_dims)
    encoder = [
        LayerSpec(in_dim=dims[i], out_dim=dims[i + 1], activation="relu", dropout_rate=cfg.dropout)
        for i in range(len(cfg.encoder_dims))
    ]
    decoder_dims = tuple(reversed(dims))
    decoder = [
        LayerSpec(
            in_dim=decoder_dims[i],
            out_dim=decoder_dims[i + 1],
            activation="relu" if i + 1 < len(decoder_dims) - 1 else "linear",
            dropout_rate=cfg.dropout if i + 1 < len(decoder_dims) - 1 else 0.0,
        )
        for i in range(len(decoder_dims) - 1)
    ]
    params = nn_core.init_network(encoder, {"recon": decoder}, rng)

    def recon_loss(rows_X: np.ndarray) -> float:
        out, _ = nn_core.forward(params, rows_X, mode="infer")
        diff = out["recon"] - rows_X
        return float((diff * diff).mean())

    state = AdamState.for_params(params, learning_rate=cfg.lr)
    history = TrainHistory()
    best_params = params.copy()
    best_val = np.inf
    wait = 0
    X_fit, X_val = X[fit_rows], X[val_rows]
    order = np.arange(fit_rows.size)

    for epoch in range(cfg.max_epochs):
        ep_loss = 0.0
        for batch in _batches(fit_rows.size, cfg.batch_size, order):
            xb = X_fit[batch]
            out, cache = nn_core.forward(params, xb, mode="train", rng=rng)
            diff = out["recon"] - xb
            loss = float((diff * diff).mean())
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite reconstruction loss at epoch {epoch}")
            upstream = 2.0 * diff / diff.size
            grads = nn_core.backward(params, cache, {"recon": upstream})
            nn_core.adam_step(params, grads, state)
            ep_loss += loss * batch.size / fit_rows.size
        val_loss = recon_loss(X_val)
        history.train_mse.append(ep_loss)
        history.train_combined.append(ep_loss)
        history.val_mse.append(val_loss)
        history.val_combined.append(val_loss)
        history.stopped_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            best_params = params.copy()
            wait = 0
        else:
            wait += 1
            if wait >= max(cfg.patience, 1):
                break

    return best_params.backbone, history


def finetune(
    encoder: list[DenseLayer],
    ds: TabularDataset,
    split: SplitAssignment,
    cfg: TrainConfig,
) -> tuple[NetworkParams, TrainHistory]:
    """Attach fresh task heads to a pre-trained encoder and train.

    Frozen mode keeps every encoder weight bit-identical and updates only the
    heads; unfrozen mode trains end-to-end.
    """
    if encoder[0].spec.in_dim != ds.n_features:
        raise ValueError(
            f"encoder expects {encoder[0].spec.in_dim} inputs, dataset has {ds.n_features}"
        )
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    latent = encoder[-1].spec.out_dim
    heads = {
        "cont": [LayerSpec(in_dim=latent, out_dim=ds.n_responses, activation="relu")],
        "bin": [LayerSpec(in_dim=latent, out_dim=ds.n_responses, activation="sigmoid")],
    }
    params = NetworkParams(
        backbone=[l.copy() for l in encoder],
        heads={h: [nn_core.glorot_uniform(s, rng) for s in specs] for h, specs in sorted(heads.items())},
    )
    return _train_supervised(
        params, ds, split, cfg, rng, freeze_backbone=(cfg.finetune_mode == "frozen")
    )


def train_model(
    ds: TabularDataset, split: SplitAssignment, cfg: TrainConfig, kind: str
) -> tuple[NetworkParams, TrainHistory]:
    """One entry point for the three supported model kinds."""
    if kind == "baseline":
        return train_baseline(ds, split, cfg)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    ae_rows = (
        np.arange(ds.n_samples) if cfg.ae.include_test_rows else split.train_rows
    )
    encoder, _ = pretrain_autoencoder(
        ds.X[ae_rows], cfg.ae, seed=cfg.seed, blocks=ds.blocks[ae_rows]
    )
    mode = "frozen" if kind == "pretrained-frozen" else "unfrozen"
    return finetune(encoder, ds, split, replace(cfg, finetune_mode=mode))


def predict(params: NetworkParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic dropout-free inference: (concentrations, probabilities)."""
    out, _ = nn_core.forward(params, np.asarray(X, dtype=np.float64), mode="infer")
    return out["cont"], out["bin"]
