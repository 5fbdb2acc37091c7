"""Learned channel positional encodings.

The attribute encoder embeds a channel by what it is (region, hemisphere,
number, reference type), never by where it sits in the montage. Categorical
attributes go through lookup tables, the number through a linear map after
normalization to [0, 1], and the four parts are fused by a one-hidden-layer
tanh MLP into the shared 64-dim space.

A bipolar derivation is embedded as the exact elementwise mean of its two
constituent electrodes, each embedded with reference type "bipolar".

The index encoder is the ablation fallback: a plain per-position table, the
thing that breaks when channels move.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .channels import (
    HEMISPHERES,
    REFERENCES,
    REGIONS,
    ChannelAttributes,
    ChannelId,
    parse_channel_name,
)

NUMBER_SCALE = 8.0  # electrode numbers are mapped to number/8 in [0, 1]


def init_attribute_encoder(
    store: ad.ParameterStore,
    rng: np.random.Generator,
    embed_dim: int = 64,
    attr_dim: int = 16,
    hidden_dim: int = 64,
    prefix: str = "posenc",
) -> None:
    fused = 4 * attr_dim
    store.add(f"{prefix}.region", rng.normal(0.0, 1.0, (len(REGIONS), attr_dim)))
    store.add(f"{prefix}.hemisphere", rng.normal(0.0, 1.0, (len(HEMISPHERES), attr_dim)))
    store.add(f"{prefix}.reference", rng.normal(0.0, 1.0, (len(REFERENCES), attr_dim)))
    store.add(f"{prefix}.number", rng.normal(0.0, 1.0, (1, attr_dim)))
    store.add(f"{prefix}.fuse_w1", rng.normal(0.0, 1.0 / np.sqrt(fused), (fused, hidden_dim)))
    store.add(f"{prefix}.fuse_b1", np.zeros(hidden_dim))
    store.add(f"{prefix}.fuse_w2", rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, embed_dim)))
    store.add(f"{prefix}.fuse_b2", np.zeros(embed_dim))


def init_index_encoder(
    store: ad.ParameterStore,
    rng: np.random.Generator,
    max_channels: int = 32,
    embed_dim: int = 64,
    prefix: str = "posenc",
) -> None:
    store.add(f"{prefix}.index_table", rng.normal(0.0, 1.0, (max_channels, embed_dim)))


def embed_attributes(attrs_list: list[ChannelAttributes], leaves: dict, prefix: str = "posenc") -> ad.Tensor:
    """Embed a list of attribute tuples; returns a (len, embed_dim) tensor."""
    if not attrs_list:
        raise ValueError("embed_attributes: empty attribute list")
    region_idx = [REGIONS.index(a.region) for a in attrs_list]
    hemi_idx = [HEMISPHERES.index(a.hemisphere) for a in attrs_list]
    ref_idx = [REFERENCES.index(a.reference) for a in attrs_list]
    numbers = np.array([[a.number / NUMBER_SCALE] for a in attrs_list])

    parts = [
        ad.take_rows(leaves[f"{prefix}.region"], region_idx),
        ad.take_rows(leaves[f"{prefix}.hemisphere"], hemi_idx),
        ad.matmul(ad.tensor(numbers), leaves[f"{prefix}.number"]),
        ad.take_rows(leaves[f"{prefix}.reference"], ref_idx),
    ]
    fused = ad.concat(parts, axis=1)
    h = ad.tanh(ad.add(ad.matmul(fused, leaves[f"{prefix}.fuse_w1"]), leaves[f"{prefix}.fuse_b1"]))
    return ad.add(ad.matmul(h, leaves[f"{prefix}.fuse_w2"]), leaves[f"{prefix}.fuse_b2"])


def embed_channels(
    channels: list[ChannelId],
    reference: str,
    leaves: dict,
    prefix: str = "posenc",
) -> ad.Tensor:
    """Embed channels of one montage; returns a (C, embed_dim) tensor.

    Unipolar channels take the montage reference; a bipolar derivation is
    the exact mean of its constituents embedded with reference "bipolar".
    The unipolar path reuses the same mean (0.5*(x+x) == x exactly) so the
    whole batch is a single fused expression.
    """
    attr_pool: list[ChannelAttributes] = []
    pool_index: dict[ChannelAttributes, int] = {}

    def intern(attrs: ChannelAttributes) -> int:
        if attrs not in pool_index:
            pool_index[attrs] = len(attr_pool)
            attr_pool.append(attrs)
        return pool_index[attrs]

    first, second = [], []
    for ch in channels:
        if ch.kind == "unipolar":
            i = intern(parse_channel_name(ch.electrodes[0], reference))
            first.append(i)
            second.append(i)
        else:
            first.append(intern(parse_channel_name(ch.electrodes[0], "bipolar")))
            second.append(intern(parse_channel_name(ch.electrodes[1], "bipolar")))

    pool = embed_attributes(attr_pool, leaves, prefix)
    a = ad.take_rows(pool, first)
    b = ad.take_rows(pool, second)
    return ad.scale(ad.add(a, b), 0.5)


def embed_channel(channel: ChannelId, reference: str, leaves: dict, prefix: str = "posenc") -> ad.Tensor:
    """Single-channel convenience wrapper; returns a (1, embed_dim) tensor."""
    return embed_channels([channel], reference, leaves, prefix)


def embed_positions(count: int, leaves: dict, prefix: str = "posenc") -> ad.Tensor:
    """Index-table fallback: rows 0..count-1 of the position table."""
    table = leaves[f"{prefix}.index_table"]
    if count > table.value.shape[0]:
        raise ValueError(
            f"montage has {count} channels but the index table holds only {table.value.shape[0]}"
        )
    return ad.take_rows(table, list(range(count)))
