"""Trainable per-channel EEG encoder with cross-channel attention mixing.

Each channel row is split into fixed-length patches, every patch goes
through a shared MLP, patches are mean-pooled to one 64-dim vector per
channel, and the channel's positional encoding is added. A single
2-head self-attention layer (pre-norm, residual) then mixes information
across channels.

All cross-channel arithmetic runs in a canonical channel order (sorted by
channel name) and is unsorted on exit, so permuting the input channels
permutes the output bitwise-exactly.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import posenc
from .channels import ChannelId


def init_eeg_encoder(
    store: ad.ParameterStore,
    rng: np.random.Generator,
    patch_len: int = 32,
    embed_dim: int = 64,
    hidden_dim: int = 64,
    heads: int = 2,
    prefix: str = "encoder",
) -> None:
    if embed_dim % heads != 0:
        raise ValueError(f"embed_dim {embed_dim} not divisible by heads {heads}")
    head_dim = embed_dim // heads
    store.add(f"{prefix}.patch_w1", rng.normal(0.0, 1.0 / np.sqrt(patch_len), (patch_len, hidden_dim)))
    store.add(f"{prefix}.patch_b1", np.zeros(hidden_dim))
    store.add(f"{prefix}.patch_w2", rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, embed_dim)))
    store.add(f"{prefix}.patch_b2", np.zeros(embed_dim))
    for h in range(heads):
        store.add(f"{prefix}.attn_q{h}", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, head_dim)))
        store.add(f"{prefix}.attn_k{h}", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, head_dim)))
        store.add(f"{prefix}.attn_v{h}", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, head_dim)))
    store.add(f"{prefix}.attn_out_w", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, embed_dim)))
    store.add(f"{prefix}.attn_out_b", np.zeros(embed_dim))


def patch_pool_features(
    values: np.ndarray,
    leaves: dict,
    patch_len: int = 32,
    prefix: str = "encoder",
) -> ad.Tensor:
    """Per-channel patch MLP + mean pooling; rows stay independent.

    `values` is (C, T) with T divisible by the patch length; the result is
    a (C, embed_dim) tensor, one pre-attention feature per channel.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"signal must be a (channels, samples) matrix, got shape {values.shape}")
    n_ch, t = values.shape
    if t % patch_len != 0:
        raise ValueError(f"signal length {t} not divisible by patch length {patch_len}")
    n_patches = t // patch_len
    x = ad.tensor(values.reshape(n_ch * n_patches, patch_len))
    h = ad.tanh(ad.add(ad.matmul(x, leaves[f"{prefix}.patch_w1"]), leaves[f"{prefix}.patch_b1"]))
    h = ad.add(ad.matmul(h, leaves[f"{prefix}.patch_w2"]), leaves[f"{prefix}.patch_b2"])
    per_patch = ad.reshape(h, (n_ch, n_patches, h.value.shape[1]))
    return ad.mean_axis(per_patch, 1)


def mix_channels(feats: ad.Tensor, leaves: dict, heads: int = 2, prefix: str = "encoder") -> ad.Tensor:
    """One pre-norm residual self-attention layer across channels."""
    normed = ad.l2_normalize_rows(feats)
    head_dim = leaves[f"{prefix}.attn_q0"].value.shape[1]
    inv_sqrt = 1.0 / np.sqrt(head_dim)
    outs = []
    for h in range(heads):
        q = ad.matmul(normed, leaves[f"{prefix}.attn_q{h}"])
        k = ad.matmul(normed, leaves[f"{prefix}.attn_k{h}"])
        v = ad.matmul(normed, leaves[f"{prefix}.attn_v{h}"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
        outs.append(ad.matmul(ad.softmax_rows(scores), v))
    mixed = ad.add(ad.matmul(ad.concat(outs, axis=1), leaves[f"{prefix}.attn_out_w"]), leaves[f"{prefix}.attn_out_b"])
    return ad.add(feats, mixed)


def canonical_order(channels: list[ChannelId]) -> tuple[np.ndarray, np.ndarray]:
    """Sorting permutation by channel name and its inverse."""
    order = np.array(sorted(range(len(channels)), key=lambda i: channels[i].name), dtype=np.intp)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order), dtype=np.intp)
    return order, inverse


def encode_batch(
    values_batch: np.ndarray,
    channels: list[ChannelId],
    reference: str,
    leaves: dict,
    patch_len: int = 32,
    heads: int = 2,
    posenc_mode: str = "attributes",
    prefix: str = "encoder",
    posenc_prefix: str = "posenc",
) -> ad.Tensor:
    """Encode a (B, C, T) stack of samples sharing one channel list.

    Returns a (B*C, embed_dim) tensor; row b*C + i is channel i of sample b,
    in the input channel order.
    """
    values_batch = np.asarray(values_batch, dtype=np.float64)
    if values_batch.ndim == 2:
        values_batch = values_batch[None, :, :]
    n_samples, n_ch, t = values_batch.shape
    if n_ch != len(channels):
        raise ValueError(f"signal has {n_ch} rows but {len(channels)} channels are named")
    if n_ch < 1:
        raise ValueError("empty channel list")

    order, inverse = canonical_order(channels)
    sorted_channels = [channels[i] for i in order]
    stacked = values_batch[:, order, :].reshape(n_samples * n_ch, t)

    pooled = patch_pool_features(stacked, leaves, patch_len=patch_len, prefix=prefix)

    if posenc_mode == "attributes":
        pe = posenc.embed_channels(sorted_channels, reference, leaves, posenc_prefix)
    elif posenc_mode == "index":
        # identity is the original montage position, assigned before sorting
        all_pe = posenc.embed_positions(int(order.max()) + 1, leaves, posenc_prefix)
        pe = ad.take_rows(all_pe, order)
    else:
        raise ValueError(f"unknown positional encoding mode '{posenc_mode}'")
    tile_idx = np.tile(np.arange(n_ch, dtype=np.intp), n_samples)
    pre = ad.add(pooled, ad.take_rows(pe, tile_idx))

    mixed_parts = []
    for b in range(n_samples):
        rows = np.arange(b * n_ch, (b + 1) * n_ch, dtype=np.intp)
        sample_feats = ad.take_rows(pre, rows) if n_samples > 1 else pre
        mixed_parts.append(mix_channels(sample_feats, leaves, heads=heads, prefix=prefix))
    mixed = mixed_parts[0] if n_samples == 1 else ad.concat(mixed_parts, axis=0)

    unsort = np.concatenate([inverse + b * n_ch for b in range(n_samples)])
    return ad.take_rows(mixed, unsort)


def eeg_encode(
    values: np.ndarray,
    channels: list[ChannelId],
    reference: str,
    leaves: dict,
    **kwargs,
) -> ad.Tensor:
    """Encode one sample; returns (C, embed_dim) in input channel order."""
    return encode_batch(np.asarray(values, dtype=np.float64)[None, :, :], channels, reference, leaves, **kwargs)
