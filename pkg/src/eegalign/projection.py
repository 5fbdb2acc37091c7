"""Channel-wise projection heads and the dynamic channel removal augmentation.

One shared projection head is applied independently to every channel, so
channel counts are free to vary and unseen channels project through the
same weights; channel identity enters through the positional encoding on
the EEG side and through the knowledge library on the text side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .channels import ChannelId, Montage
from .textfeat import TextFeaturizer


class ChannelKnowledgeLibrary:
    """Per-electrode descriptive text and its cached frozen feature."""

    def __init__(self, descriptions: dict[str, str], featurizer: TextFeaturizer):
        self.descriptions = {k.upper(): v for k, v in descriptions.items()}
        self.featurizer = featurizer
        self._cache = {name: featurizer.featurize_text(text) for name, text in self.descriptions.items()}

    @classmethod
    def load(cls, featurizer: TextFeaturizer, path=None) -> "ChannelKnowledgeLibrary":
        if path is not None:
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f, delimiter="\t"))
        else:
            src = resources.files("eegalign.data").joinpath("channel_knowledge.tsv")
            with src.open(newline="") as f:
                rows = list(csv.DictReader(f, delimiter="\t"))
        return cls({r["name"]: r["description"] for r in rows}, featurizer)

    def feature(self, channel: ChannelId) -> np.ndarray:
        parts = []
        for electrode in channel.electrodes:
            if electrode not in self._cache:
                raise KeyError(f"no knowledge entry for channel '{electrode}'")
            parts.append(self._cache[electrode])
        if len(parts) == 1:
            return parts[0]
        return 0.5 * (parts[0] + parts[1])

    def validate_montage(self, montage: Montage) -> None:
        for ch in montage.channels:
            for electrode in ch.electrodes:
                if electrode not in self._cache:
                    raise KeyError(f"montage channel '{electrode}' missing from the knowledge library")


def init_projection_heads(
    store: ad.ParameterStore,
    rng: np.random.Generator,
    embed_dim: int = 64,
    text_dim: int = 256,
    channelwise: bool = True,
    prefix: str = "proj",
) -> None:
    if channelwise:
        store.add(f"{prefix}.eeg_w", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, embed_dim)))
        store.add(f"{prefix}.eeg_b", np.zeros(embed_dim))
        store.add(
            f"{prefix}.text_chan_w",
            rng.normal(0.0, 1.0 / np.sqrt(2 * text_dim), (2 * text_dim, embed_dim)),
        )
        store.add(f"{prefix}.text_chan_b", np.zeros(embed_dim))
    else:
        # channel-pooled fallback: one head on the mean channel feature
        store.add(f"{prefix}.pooled_w", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, embed_dim)))
        store.add(f"{prefix}.pooled_b", np.zeros(embed_dim))
    store.add(f"{prefix}.text_glob_w", rng.normal(0.0, 1.0 / np.sqrt(text_dim), (text_dim, embed_dim)))
    store.add(f"{prefix}.text_glob_b", np.zeros(embed_dim))


def project_eeg_channels(features: ad.Tensor, leaves: dict, prefix: str = "proj") -> ad.Tensor:
    """Shared head applied per channel; returns unit-norm (C, embed_dim)."""
    if features.value.ndim != 2 or features.value.shape[0] < 1:
        raise ValueError("project_eeg_channels: need a non-empty (channels, dim) matrix")
    out = ad.add(ad.matmul(features, leaves[f"{prefix}.eeg_w"]), leaves[f"{prefix}.eeg_b"])
    return ad.l2_normalize_rows(out)


def project_text_channels(
    report_feat: np.ndarray,
    channels: list[ChannelId],
    lib: ChannelKnowledgeLibrary,
    leaves: dict,
    prefix: str = "proj",
) -> ad.Tensor:
    """Fuse the report feature with each channel's knowledge feature."""
    if not channels:
        raise ValueError("project_text_channels: empty channel list")
    report_feat = np.asarray(report_feat, dtype=np.float64)
    rows = np.stack([np.concatenate([report_feat, lib.feature(ch)]) for ch in channels])
    out = ad.add(ad.matmul(ad.tensor(rows), leaves[f"{prefix}.text_chan_w"]), leaves[f"{prefix}.text_chan_b"])
    return ad.l2_normalize_rows(out)


def project_text_global(report_feat: np.ndarray, leaves: dict, prefix: str = "proj") -> ad.Tensor:
    """Report-only projection; returns a unit-norm (1, embed_dim) row."""
    row = ad.tensor(np.asarray(report_feat, dtype=np.float64)[None, :])
    out = ad.add(ad.matmul(row, leaves[f"{prefix}.text_glob_w"]), leaves[f"{prefix}.text_glob_b"])
    return ad.l2_normalize_rows(out)


def project_pooled(features: ad.Tensor, leaves: dict, prefix: str = "proj") -> ad.Tensor:
    """Fallback global head for the no-channelwise ablation: mean over channels."""
    pooled = ad.reshape(ad.mean_axis(features, 0), (1, features.value.shape[1]))
    out = ad.add(ad.matmul(pooled, leaves[f"{prefix}.pooled_w"]), leaves[f"{prefix}.pooled_b"])
    return ad.l2_normalize_rows(out)


@dataclass(frozen=True)
class RemovalPolicy:
    p_remove: float
    r_max: float

    def __post_init__(self):
        if not 0.0 <= self.p_remove <= 1.0:
            raise ValueError(f"p_remove must be in [0, 1], got {self.p_remove}")
        if not 0.0 < self.r_max <= 1.0:
            raise ValueError(f"r_max must be in (0, 1], got {self.r_max}")

    def max_removed(self, n_channels: int) -> int:
        return int(np.floor(n_channels * self.r_max))


def removal_indices(n_channels: int, policy: RemovalPolicy, rng: np.random.Generator) -> np.ndarray:
    """Indices retained for one mini-batch (shared by every sample in it).

    With probability p_remove, m ~ Uniform{1..floor(C*r_max)} channels are
    dropped uniformly without replacement; otherwise all indices survive.
    """
    if n_channels < 2:
        raise ValueError(f"channel removal needs C >= 2, got {n_channels}")
    m_max = policy.max_removed(n_channels)
    if m_max < 1:
        raise ValueError(f"floor(C*r_max) must be >= 1, got C={n_channels}, r_max={policy.r_max}")
    if rng.random() >= policy.p_remove:
        return np.arange(n_channels, dtype=np.intp)
    m = int(rng.integers(1, m_max + 1))
    removed = set(rng.choice(n_channels, size=m, replace=False).tolist())
    return np.array([i for i in range(n_channels) if i not in removed], dtype=np.intp)


def apply_channel_removal(
    channels: list[ChannelId], policy: RemovalPolicy, rng: np.random.Generator
) -> list[ChannelId]:
    keep = removal_indices(len(channels), policy, rng)
    return [channels[i] for i in keep]
