"""Contrastive objectives: channel-level and sample-level InfoNCE, their
weighted combination, attention pooling, and channel subsampling.

Both losses are symmetric InfoNCE at a shared learnable temperature,
stored as log-temperature and clamped from below after optimizer steps.
Similarities are dot products of unit-norm embeddings, i.e. cosines.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad

logger = logging.getLogger(__name__)

TAU_INIT = 0.07
TAU_MIN = 0.01


def init_temperature(store: ad.ParameterStore, tau_init: float = TAU_INIT, name: str = "loss.log_tau") -> None:
    if tau_init <= 0:
        raise ValueError(f"temperature must be positive, got {tau_init}")
    store.add(name, np.log(tau_init))


def clamp_temperature(store: ad.ParameterStore, tau_min: float = TAU_MIN, name: str = "loss.log_tau") -> None:
    floor = np.log(tau_min)
    if float(store.value(name)) < floor:
        store.set_value(name, floor)


def init_attention_pool(store: ad.ParameterStore, rng: np.random.Generator, embed_dim: int = 64, prefix: str = "pool") -> None:
    store.add(f"{prefix}.score_w", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, embed_dim)))
    store.add(f"{prefix}.score_v", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, 1)))


def attention_pool(channel_embeds: ad.Tensor, channel_feats: ad.Tensor, leaves: dict, prefix: str = "pool") -> ad.Tensor:
    """Score-weighted pooling over channels; returns a unit-norm (1, dim) row.

    Keys and values are the sum of channel embedding and channel feature.
    Rows are processed in a canonical (lexicographic) order so the output is
    bitwise identical under any permutation of the input channels.
    """
    if channel_embeds.value.ndim != 2 or channel_embeds.value.shape[0] < 1:
        raise ValueError("attention_pool: need a non-empty (channels, dim) matrix")
    if channel_embeds.value.shape != channel_feats.value.shape:
        raise ad.ShapeError(
            f"attention_pool: embeds {channel_embeds.value.shape} vs feats {channel_feats.value.shape}"
        )
    x = ad.add(channel_embeds, channel_feats)
    order = np.lexsort(x.value.T[::-1])  # canonical row order, independent of input order
    xs = ad.take_rows(x, order)
    scores = ad.matmul(ad.tanh(ad.matmul(xs, leaves[f"{prefix}.score_w"])), leaves[f"{prefix}.score_v"])
    alpha = ad.softmax_rows(ad.transpose(scores))  # (1, C)
    return ad.l2_normalize_rows(ad.matmul(alpha, xs))


def _check_unit_rows(t: ad.Tensor, what: str) -> None:
    norms = np.sqrt((t.value * t.value).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError(f"{what}: embeddings must be unit-norm (worst |norm-1| = {np.abs(norms - 1.0).max():.3e})")


def _symmetric_infonce(eeg: ad.Tensor, text: ad.Tensor, log_tau: ad.Tensor) -> ad.Tensor:
    n = eeg.value.shape[0]
    inv_tau = ad.exp(ad.scale(log_tau, -1.0))
    sims = ad.mul(ad.matmul(eeg, ad.transpose(text)), inv_tau)
    fwd = ad.log_softmax_rows(sims)
    bwd = ad.log_softmax_rows(ad.transpose(sims))
    matched = ad.mul(ad.add(fwd, bwd), ad.tensor(np.eye(n)))
    return ad.scale(ad.sum_all(matched), -0.5 / n)


def channel_contrastive_loss(eeg: ad.Tensor, text: ad.Tensor, log_tau: ad.Tensor) -> ad.Tensor:
    """Symmetric InfoNCE over the pooled per-channel pairs of a batch.

    Inputs are (B*N, dim) matched rows. A single pair degenerates to a
    one-element softmax and the loss is exactly zero.
    """
    if eeg.value.shape != text.value.shape or eeg.value.ndim != 2:
        raise ad.ShapeError(f"channel loss: shapes {eeg.value.shape} vs {text.value.shape}")
    if eeg.value.shape[0] < 1:
        raise ValueError("channel loss: empty batch")
    _check_unit_rows(eeg, "channel loss (eeg)")
    _check_unit_rows(text, "channel loss (text)")
    if eeg.value.shape[0] == 1:
        return ad.tensor(0.0)
    return _symmetric_infonce(eeg, text, log_tau)


def sample_contrastive_loss(eeg: ad.Tensor, text: ad.Tensor, log_tau: ad.Tensor) -> ad.Tensor:
    """Symmetric InfoNCE over (B, dim) global embeddings; needs B >= 2."""
    if eeg.value.shape != text.value.shape or eeg.value.ndim != 2:
        raise ad.ShapeError(f"sample loss: shapes {eeg.value.shape} vs {text.value.shape}")
    if eeg.value.shape[0] < 2:
        raise ValueError(f"sample loss needs at least 2 samples, got {eeg.value.shape[0]}")
    _check_unit_rows(eeg, "sample loss (eeg)")
    _check_unit_rows(text, "sample loss (text)")
    return _symmetric_infonce(eeg, text, log_tau)


def alignment_loss(sample_loss: ad.Tensor, channel_loss: ad.Tensor, channel_weight: float) -> ad.Tensor:
    """Combined objective: sample-level plus `channel_weight` times channel-level."""
    if channel_weight < 0:
        raise ValueError(f"channel_weight must be non-negative, got {channel_weight}")
    return ad.add(sample_loss, ad.scale(channel_loss, channel_weight))


def sample_channel_indices(n_channels: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct channel indices, uniform without replacement.

    Requests exceeding the available channel count (possible after heavy
    removal on a small montage) are clamped with a log line.
    """
    if n_channels < 1:
        raise ValueError("no channels to sample from")
    if n_samples > n_channels:
        logger.warning("channel sample count %d clamped to %d available channels", n_samples, n_channels)
        n_samples = n_channels
    if n_samples < 1:
        raise ValueError(f"need at least one sampled channel, got {n_samples}")
    return np.sort(rng.choice(n_channels, size=n_samples, replace=False)).astype(np.intp)
