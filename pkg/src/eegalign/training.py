"""Contrastive training loop.

Deterministic given (config, seed): batch order, channel removal, channel
subsampling and validation prompt synthesis each run on their own seeded
stream, so two runs with the same inputs produce bitwise-identical loss
curves and checkpoints. Validation is text-based classification with
ensemble prompts on all three tasks; the checkpoint with the highest mean
balanced accuracy is kept.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluation, prompts
from .datagen import TASKS, Sample
from .losses import clamp_temperature
from .model import AlignmentModel
from .projection import RemovalPolicy, removal_indices

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 64
    lr: float = 6e-3
    channel_weight: float = 0.5  # weight of the channel-level loss
    channel_samples: int = 3  # channels subsampled per sample for the channel loss
    p_remove: float = 0.5
    r_max: float = 0.8
    time_shift: bool = False  # optional circular-shift augmentation (segment resampling already curbs memorization)
    use_channel_loss: bool = True
    ensemble_size: int = 64  # prompts per label for validation scoring
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    best_epoch: int
    best_score: float
    loss_rows: list[dict] = field(default_factory=list)
    val_rows: list[dict] = field(default_factory=list)
    best_model: AlignmentModel | None = None


def clone_store(store: ad.ParameterStore) -> ad.ParameterStore:
    out = ad.ParameterStore()
    for name in store.names():
        out.add(name, store.value(name).copy(), frozen=store.is_frozen(name))
    return out


def build_task_prototypes(
    model: AlignmentModel,
    train_samples: list[Sample],
    ensemble_size: int,
    rng: np.random.Generator,
) -> dict[str, dict[str, np.ndarray]]:
    """Ensemble prototypes for every task, from training reports only."""
    out: dict[str, dict[str, np.ndarray]] = {}
    reports = [s.report for s in train_samples]
    for task in TASKS:
        pools = prompts.build_pools(reports, [s.labels[task] for s in train_samples])
        out[task] = {
            value: prompts.label_prototype(pools[value], ensemble_size, rng, model.embed_text).embedding
            for value in sorted(pools)
        }
    return out


def _mean_recall(preds: list[str], labels: list[str]) -> float:
    """Balanced accuracy over the classes present in `labels`; predictions of
    absent classes simply count as misses (tiny validation splits may not
    cover every class)."""
    preds_arr = np.asarray(preds)
    labels_arr = np.asarray(labels)
    recalls = [float((preds_arr[labels_arr == c] == c).mean()) for c in sorted(set(labels))]
    return float(np.mean(recalls))


def validation_scores(
    model: AlignmentModel,
    val_samples: list[Sample],
    prototypes: dict[str, dict[str, np.ndarray]],
) -> dict[str, float]:
    embeds = model.embed_samples(val_samples)["global"]
    scores = {}
    for task in TASKS:
        preds = evaluation.text_based_classify(embeds, prototypes[task])
        scores[task] = _mean_recall(preds, [s.labels[task] for s in val_samples])
    return scores


def train_model(
    model: AlignmentModel,
    train_samples: list[Sample],
    val_samples: list[Sample],
    tcfg: TrainConfig,
    seed: int,
) -> TrainResult:
    if not train_samples or not val_samples:
        raise ValueError("need non-empty train and validation splits")
    channels = list(train_samples[0].channels)
    reference = train_samples[0].reference
    names = [c.name for c in channels]
    for s in train_samples:
        if [c.name for c in s.channels] != names or s.reference != reference:
            raise ValueError("training samples must share one montage")

    report_feats = np.stack([model.report_feature(s.report) for s in train_samples])
    values_all = np.stack([s.values for s in train_samples])

    rng_order = np.random.default_rng([seed, 101])
    rng_removal = np.random.default_rng([seed, 102])
    rng_chan = np.random.default_rng([seed, 103])
    rng_shift = np.random.default_rng([seed, 105])
    policy = RemovalPolicy(tcfg.p_remove, tcfg.r_max)

    by_subject: dict[int, list[int]] = {}
    for i, s in enumerate(train_samples):
        by_subject.setdefault(s.subject, []).append(i)
    subject_rows = [np.array(v, dtype=np.intp) for _, v in sorted(by_subject.items())]

    result = TrainResult(best_epoch=0, best_score=-1.0)
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        # one segment per subject per epoch: segment fingerprints can't be memorized
        chosen = np.array(
            [rows[rng_order.integers(0, rows.size)] for rows in subject_rows], dtype=np.intp
        )
        order = chosen[rng_order.permutation(chosen.size)]
        for start in range(0, len(order), tcfg.batch_size):
            batch_idx = order[start : start + tcfg.batch_size]
            if batch_idx.size < 2:
                logger.debug("epoch %d: dropping trailing batch of size %d", epoch, batch_idx.size)
                continue
            keep = removal_indices(len(channels), policy, rng_removal)
            kept_channels = [channels[i] for i in keep]
            values = values_all[batch_idx][:, keep, :]
            if tcfg.time_shift:
                t_len = values.shape[-1]
                shifts = rng_shift.integers(0, t_len, size=values.shape[0])
                cols = (np.arange(t_len)[None, None, :] - shifts[:, None, None]) % t_len
                values = np.take_along_axis(values, np.broadcast_to(cols, values.shape), axis=-1)
            leaves = model.leaves()
            try:
                loss, parts = model.batch_loss(
                    leaves,
                    values,
                    kept_channels,
                    reference,
                    report_feats[batch_idx],
                    channel_weight=tcfg.channel_weight,
                    n_channel_samples=tcfg.channel_samples,
                    use_channel_loss=tcfg.use_channel_loss,
                    rng=rng_chan,
                )
                ad.backward(loss)
            except FloatingPointError as e:
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}: {e}") from e
            model.store.adam_step(lr=tcfg.lr, betas=tcfg.adam_betas, eps=tcfg.adam_eps)
            clamp_temperature(model.store, model.config.tau_min)
            step += 1
            result.loss_rows.append(
                {
                    "epoch": epoch,
                    "step": step,
                    "total": float(loss.value),
                    "sample_loss": parts["sample_loss"],
                    "channel_loss": parts["channel_loss"],
                    "tau": parts["tau"],
                    "channels_kept": len(keep),
                }
            )

        rng_prompts = np.random.default_rng([seed, 104, epoch])
        protos = build_task_prototypes(model, train_samples, tcfg.ensemble_size, rng_prompts)
        scores = validation_scores(model, val_samples, protos)
        mean_score = float(np.mean([scores[t] for t in TASKS]))
        result.val_rows.append({"epoch": epoch, **scores, "mean": mean_score})
        if mean_score > result.best_score:
            result.best_score = mean_score
            result.best_epoch = epoch
            result.best_model = AlignmentModel(
                model.config, store=clone_store(model.store), knowledge=model.knowledge
            )
        logger.info("epoch %d: val mean balanced accuracy %.4f", epoch, mean_score)
    return result


def write_loss_curve(rows: list[dict], path) -> None:
    cols = ["epoch", "step", "total", "sample_loss", "channel_loss", "tau", "channels_kept"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
