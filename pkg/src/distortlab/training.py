"""Two-stage curriculum training: patch-level mask training, then pixel-level
fine-tuning, with linear warmup/decay scheduling, decoupled weight decay, and
a validation-driven learning-rate grid search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .artifacts import derive_seed
from .errors import DivergenceError, DimensionMismatchError, NumericError, PipelineError
from .masks import BinaryMask
from .model import (
    Model,
    ModelConfig,
    PATCH_SIZE,
    backward_patches,
    decayed_param_names,
    forward_patches,
    init_model,
    upsample_weights,
)

STAGE_PATCH = "patch"
STAGE_PIXEL = "pixel"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    stage1_epochs: int = 3
    stage2_max_epochs: int = 8
    lr_grid: tuple[float, ...] = (1e-3, 5e-3, 1e-4, 5e-4, 1e-5, 5e-5, 1e-6)
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    early_stop_patience: int = 2
    shuffle_seed: int = 0
    positive_reweight: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must be in [0, 1)")
        if not self.lr_grid:
            raise ValueError("lr_grid must be non-empty")
        if self.stage1_epochs < 0 or self.stage2_max_epochs < 0:
            raise ValueError("epoch counts must be non-negative")


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    chosen_lr: float | None = None
    lr_outcomes: list[dict] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        records: list[dict] = [{"record": "summary", "chosenLr": self.chosen_lr}]
        records += [{"record": "lrOutcome", **o} for o in self.lr_outcomes]
        records += [{"record": "stage", **s} for s in self.stages]
        records += [{"record": "epoch", **e} for e in self.epochs]
        records += [{"record": "step", **s} for s in self.steps]
        return records


def patch_labels(mask: BinaryMask, patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Per-patch boolean labels: True iff strictly more than half the patch
    area is distorted (98/196 pixels is False, 99 is True at size 14).

    The mask is zero-padded bottom/right to patch multiples; padded pixels
    count as normal.
    """
    bits = mask.bits
    rows = -(-bits.shape[0] // patch_size)
    cols = -(-bits.shape[1] // patch_size)
    padded = np.zeros((rows * patch_size, cols * patch_size), dtype=bool)
    padded[: bits.shape[0], : bits.shape[1]] = bits
    counts = (
        padded.reshape(rows, patch_size, cols, patch_size)
        .sum(axis=(1, 3))
        .astype(np.int64)
    )
    return 2 * counts > patch_size * patch_size


def bce_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    exclude_mask: np.ndarray | None = None,
    positive_weight: float = 1.0,
) -> float:
    """Mean binary cross-entropy over included positions, stable log-sum form."""
    loss, _ = bce_loss_grad(logits, labels, exclude_mask, positive_weight)
    return loss


def bce_loss_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    exclude_mask: np.ndarray | None = None,
    positive_weight: float = 1.0,
) -> tuple[float, np.ndarray]:
    """BCE plus its gradient w.r.t. the logits (already normalized by count)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise DimensionMismatchError(f"logits {z.shape} vs labels {y.shape}")
    include = np.ones_like(z, dtype=bool)
    if exclude_mask is not None:
        if exclude_mask.shape != z.shape:
            raise DimensionMismatchError(
                f"exclude mask {exclude_mask.shape} vs logits {z.shape}"
            )
        include &= ~exclude_mask
    if not include.any():
        raise ValueError("all positions excluded from the loss")

    weights = np.where(y > 0.5, positive_weight, 1.0) * include
    total = weights.sum()
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float((per * weights).sum() / total)
    grad = (_sigmoid(z) - y) * weights / total
    return loss, grad


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lr_schedule(
    step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.1
) -> float:
    """Linear ramp from 0 to base_lr over the warmup steps, then linear decay
    to 0 at total_steps. Defined on 0 <= step <= total_steps so both endpoints
    are inspectable; value is 0 at both ends when warmup is non-zero.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = int(np.ceil(warmup_fraction * total_steps))
    if step < warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - warmup)


class AdamW:
    """Adam moments with decoupled weight decay; norm/bias parameters exempt."""

    def __init__(
        self,
        model: Model,
        weight_decay: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decayed = decayed_param_names(model.config)
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.t = 0

    def step(self, model: Model, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in model.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if name in self.decayed:
                update = update + self.weight_decay * p
            p -= lr * update


# ---------------------------------------------------------------------------
# Training data plumbing
# ---------------------------------------------------------------------------

@dataclass
class TrainData:
    """One split, patchified once; all images share a single size."""

    sample_ids: list[str]
    vectors: np.ndarray      # (S, N, patch_dim)
    patch_targets: np.ndarray  # (S, R, C) bool
    pixel_targets: np.ndarray  # (S, H, W) bool
    rows: int
    cols: int
    height: int
    width: int

    @property
    def size(self) -> int:
        return len(self.sample_ids)

    @property
    def positive_pixel_rate(self) -> float:
        return float(self.pixel_targets.mean())


def prepare_train_data(
    samples: list[tuple[str, np.ndarray, BinaryMask]], patch_size: int = PATCH_SIZE
) -> TrainData:
    """Patchify (sample_id, image, target mask) triples of uniform size."""
    from .model import patchify

    if not samples:
        raise ValueError("empty split")
    ids, vectors, patch_targets, pixel_targets = [], [], [], []
    first = samples[0][1].shape
    rows = cols = 0
    for sample_id, image, mask in samples:
        if image.shape != first:
            raise DimensionMismatchError("training samples must share one image size")
        grid = patchify(image, patch_size)
        rows, cols = grid.rows, grid.cols
        ids.append(sample_id)
        vectors.append(grid.vectors)
        patch_targets.append(patch_labels(mask, patch_size))
        pixel_targets.append(mask.bits)
    return TrainData(
        sample_ids=ids,
        vectors=np.stack(vectors),
        patch_targets=np.stack(patch_targets),
        pixel_targets=np.stack(pixel_targets),
        rows=rows,
        cols=cols,
        height=first[0],
        width=first[1],
    )


@dataclass
class TrainCorpus:
    train: TrainData
    val: TrainData
    test: TrainData | None = None


def _batch_pixel_logits(patch_logits: np.ndarray, wr: np.ndarray, wc: np.ndarray) -> np.ndarray:
    return (wr[None, :, :] @ patch_logits) @ wc.T[None, :, :]


def _batch_pixel_backward(dpixel: np.ndarray, wr: np.ndarray, wc: np.ndarray) -> np.ndarray:
    return (wr.T[None, :, :] @ dpixel) @ wc[None, :, :]


def validation_pixel_f1(model: Model, data: TrainData, batch_size: int = 64) -> float:
    """Micro pixel F1 of thresholded (logit > 0) predictions on a split."""
    wr = upsample_weights(data.rows, data.height, model.config.patch_size)
    wc = upsample_weights(data.cols, data.width, model.config.patch_size)
    tp = fp = fn = 0
    for start in range(0, data.size, batch_size):
        batch = data.vectors[start : start + batch_size]
        logits = forward_patches(model, batch, data.rows, data.cols)
        pixel = _batch_pixel_logits(logits, wr, wc)
        pred = pixel > 0.0
        gt = data.pixel_targets[start : start + batch_size]
        tp += int(np.sum(pred & gt))
        fp += int(np.sum(pred & ~gt))
        fn += int(np.sum(~pred & gt))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def train_stage(
    model: Model,
    train_data: TrainData,
    level: str,
    config: TrainConfig,
    base_lr: float,
    val_data: TrainData | None = None,
    history: TrainHistory | None = None,
    epochs_override: int | None = None,
    stage_name: str | None = None,
) -> tuple[Model, TrainHistory]:
    """Run one curriculum stage and return the updated model plus history.

    The patch stage runs a fixed number of epochs; the pixel stage early-stops
    when validation pixel F1 fails to improve for the configured patience and
    keeps the best-validation parameters seen (the entry state included).
    """
    if level not in (STAGE_PATCH, STAGE_PIXEL):
        raise ValueError(f"unknown stage level {level!r}")
    history = history if history is not None else TrainHistory()
    stage_name = stage_name or level
    early_stop = level == STAGE_PIXEL and epochs_override is None

    if level == STAGE_PATCH:
        epochs = config.stage1_epochs if epochs_override is None else epochs_override
    else:
        epochs = config.stage2_max_epochs if epochs_override is None else epochs_override
    stage_record = {
        "name": stage_name,
        "level": level,
        "startStep": len(history.steps),
        "epochsRequested": epochs,
        "baseLr": base_lr,
    }
    if epochs == 0:
        stage_record["endStep"] = len(history.steps)
        history.stages.append(stage_record)
        return model, history

    model = model.copy()
    steps_per_epoch = -(-train_data.size // config.batch_size)
    total_steps = epochs * steps_per_epoch
    optimizer = AdamW(model, config.weight_decay)
    wr = wc = None
    if level == STAGE_PIXEL:
        wr = upsample_weights(train_data.rows, train_data.height, model.config.patch_size)
        wc = upsample_weights(train_data.cols, train_data.width, model.config.patch_size)
    positive_weight = 1.0
    if config.positive_reweight:
        targets = train_data.patch_targets if level == STAGE_PATCH else train_data.pixel_targets
        pos = float(targets.mean())
        positive_weight = (1.0 - pos) / max(pos, 1e-6)

    best_model = model.copy()
    best_f1 = -1.0
    if early_stop and val_data is not None:
        best_f1 = validation_pixel_f1(model, val_data)
        history.epochs.append(
            {"stage": stage_name, "epoch": -1, "valPixelF1": best_f1, "note": "entry"}
        )
    stall = 0
    step = 0
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(config.shuffle_seed, stage_name, epoch))
        order = rng.permutation(train_data.size)
        epoch_losses = []
        for start in range(0, train_data.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = train_data.vectors[idx]
            try:
                logits, cache = forward_patches(
                    model, batch, train_data.rows, train_data.cols, want_cache=True
                )
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite activations at stage {stage_name} step {step}", history
                ) from exc
            if level == STAGE_PATCH:
                labels = train_data.patch_targets[idx]
                loss, dlogits = bce_loss_grad(logits, labels, positive_weight=positive_weight)
            else:
                pixel = _batch_pixel_logits(logits, wr, wc)
                labels = train_data.pixel_targets[idx]
                loss, dpixel = bce_loss_grad(pixel, labels, positive_weight=positive_weight)
                dlogits = _batch_pixel_backward(dpixel, wr, wc)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at stage {stage_name} step {step}", history
                )
            lr = lr_schedule(step, total_steps, base_lr, config.warmup_fraction)
            grads = backward_patches(model, cache, dlogits)
            optimizer.step(model, grads, lr)
            history.steps.append(
                {"stage": stage_name, "step": step, "lr": lr, "loss": loss}
            )
            epoch_losses.append(loss)
            step += 1
        epoch_record = {
            "stage": stage_name,
            "epoch": epoch,
            "meanLoss": float(np.mean(epoch_losses)),
        }
        if val_data is not None:
            try:
                f1 = validation_pixel_f1(model, val_data)
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite activations validating {stage_name}", history
                ) from exc
            epoch_record["valPixelF1"] = f1
            if early_stop:
                if f1 > best_f1:
                    best_f1 = f1
                    best_model = model.copy()
                    stall = 0
                else:
                    stall += 1
        history.epochs.append(epoch_record)
        if early_stop and stall >= config.early_stop_patience:
            epoch_record["earlyStopped"] = True
            break
    if early_stop and val_data is not None:
        model = best_model
    stage_record["endStep"] = len(history.steps)
    history.stages.append(stage_record)
    return model, history


def two_stage_train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    corpus: TrainCorpus,
    base_lr: float | None = None,
) -> tuple[Model, TrainHistory]:
    """Patch-level training followed by pixel-level fine-tuning; returns the
    best-validation-F1 checkpoint. When base_lr is None the learning rate is
    chosen by the validation grid search first.
    """
    history = TrainHistory()
    if base_lr is None:
        base_lr, outcomes = grid_search_lr_detailed(model_config, train_config, corpus)
        history.lr_outcomes = outcomes
    history.chosen_lr = base_lr
    model = init_model(model_config, positive_prior=_prior(corpus.train))
    model, history = train_stage(
        model, corpus.train, STAGE_PATCH, train_config, base_lr,
        val_data=corpus.val, history=history, stage_name="stage1-patch",
    )
    model, history = train_stage(
        model, corpus.train, STAGE_PIXEL, train_config, base_lr,
        val_data=corpus.val, history=history, stage_name="stage2-pixel",
    )
    return model, history


def pixel_only_train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    corpus: TrainCorpus,
    base_lr: float | None = None,
) -> tuple[Model, TrainHistory]:
    """Pixel-level-only baseline with the same total epoch budget as the
    two-stage run; used for curriculum-vs-direct comparisons.
    """
    history = TrainHistory()
    if base_lr is None:
        base_lr, outcomes = grid_search_lr_detailed(model_config, train_config, corpus)
        history.lr_outcomes = outcomes
    history.chosen_lr = base_lr
    budget = train_config.stage1_epochs + train_config.stage2_max_epochs
    config = TrainConfig(
        batch_size=train_config.batch_size,
        stage1_epochs=train_config.stage1_epochs,
        stage2_max_epochs=budget,
        lr_grid=train_config.lr_grid,
        weight_decay=train_config.weight_decay,
        warmup_fraction=train_config.warmup_fraction,
        early_stop_patience=train_config.early_stop_patience,
        shuffle_seed=train_config.shuffle_seed,
        positive_reweight=train_config.positive_reweight,
    )
    model = init_model(model_config, positive_prior=_prior(corpus.train))
    model, history = train_stage(
        model, corpus.train, STAGE_PIXEL, config, base_lr,
        val_data=corpus.val, history=history, stage_name="pixel-only",
    )
    return model, history


def _prior(data: TrainData) -> float:
    return min(max(data.positive_pixel_rate, 1e-4), 1.0 - 1e-4)


def grid_search_lr(
    model_config: ModelConfig, train_config: TrainConfig, corpus: TrainCorpus
) -> float:
    """Best base learning rate by short proxy runs (1 patch + 1 pixel epoch)."""
    lr, _ = grid_search_lr_detailed(model_config, train_config, corpus)
    return lr


def grid_search_lr_detailed(
    model_config: ModelConfig, train_config: TrainConfig, corpus: TrainCorpus
) -> tuple[float, list[dict]]:
    grid = train_config.lr_grid
    if len(grid) == 1:
        return grid[0], [{"lr": grid[0], "outcome": "only-candidate"}]
    outcomes: list[dict] = []
    scored: list[tuple[float, float]] = []
    for lr in grid:
        model = init_model(model_config, positive_prior=_prior(corpus.train))
        try:
            model, _ = train_stage(
                model, corpus.train, STAGE_PATCH, train_config, lr,
                epochs_override=1, stage_name=f"proxy-patch@{lr:g}",
            )
            model, _ = train_stage(
                model, corpus.train, STAGE_PIXEL, train_config, lr,
                epochs_override=1, stage_name=f"proxy-pixel@{lr:g}",
            )
        except DivergenceError:
            outcomes.append({"lr": lr, "outcome": "diverged"})
            continue
        f1 = validation_pixel_f1(model, corpus.val)
        outcomes.append({"lr": lr, "outcome": "ok", "valPixelF1": f1})
        scored.append((lr, f1))
    if not scored:
        raise PipelineError(f"every learning rate diverged: {outcomes}")
    scored.sort(key=lambda pair: (-pair[1], pair[0]))  # ties toward the smaller lr
    return scored[0][0], outcomes
