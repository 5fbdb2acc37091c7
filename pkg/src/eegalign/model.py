"""Full alignment model: parameter construction plus the forward paths used
for training and inference.

The model owns a ParameterStore and the frozen text featurizer. Component
toggles select the positional encoding (semantic attributes vs montage
index) and whether channel-wise embeddings exist at all (the pooled
fallback collapses each sample to one embedding before projection).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder, losses, posenc, projection
from .channels import ChannelId
from .datagen import Sample
from .projection import ChannelKnowledgeLibrary
from .textfeat import FEATURIZER_SEED, ReportText, TextFeaturizer


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    attr_dim: int = 16
    hidden_dim: int = 64
    patch_len: int = 32
    heads: int = 2
    text_dim: int = 256
    posenc_mode: str = "attributes"  # "attributes" | "index"
    channelwise: bool = True
    max_channels: int = 32
    tau_init: float = losses.TAU_INIT
    tau_min: float = losses.TAU_MIN
    featurizer_seed: int = FEATURIZER_SEED

    def __post_init__(self):
        if self.posenc_mode not in ("attributes", "index"):
            raise ValueError(f"unknown positional encoding mode '{self.posenc_mode}'")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    def describe(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class BatchEmbeddings:
    """Tape tensors for one batch of samples sharing a channel list."""

    channel_feats: ad.Tensor  # (B*C, d) encoder outputs
    eeg_channel: ad.Tensor | None  # (B*C, d) unit rows, None in pooled fallback
    text_channel: ad.Tensor | None  # (B*C, d) unit rows
    eeg_global: ad.Tensor  # (B, d) unit rows
    text_global: ad.Tensor  # (B, d) unit rows
    n_samples: int = 0
    n_channels: int = 0
    index_map: np.ndarray = field(default=None)


class AlignmentModel:
    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator | None = None,
        store: ad.ParameterStore | None = None,
        knowledge: ChannelKnowledgeLibrary | None = None,
    ):
        self.config = config
        self.featurizer = TextFeaturizer(dim=config.text_dim, seed=config.featurizer_seed)
        self.knowledge = knowledge or ChannelKnowledgeLibrary.load(self.featurizer)
        if store is not None:
            self.store = store
        else:
            if rng is None:
                raise ValueError("need an rng to initialize parameters")
            self.store = self._init_store(rng)

    def _init_store(self, rng: np.random.Generator) -> ad.ParameterStore:
        c = self.config
        store = ad.ParameterStore()
        if c.posenc_mode == "attributes":
            posenc.init_attribute_encoder(
                store, rng, embed_dim=c.embed_dim, attr_dim=c.attr_dim, hidden_dim=c.hidden_dim
            )
        else:
            posenc.init_index_encoder(store, rng, max_channels=c.max_channels, embed_dim=c.embed_dim)
        encoder.init_eeg_encoder(
            store, rng, patch_len=c.patch_len, embed_dim=c.embed_dim, hidden_dim=c.hidden_dim, heads=c.heads
        )
        projection.init_projection_heads(
            store, rng, embed_dim=c.embed_dim, text_dim=c.text_dim, channelwise=c.channelwise
        )
        if c.channelwise:
            losses.init_attention_pool(store, rng, embed_dim=c.embed_dim)
        losses.init_temperature(store, tau_init=c.tau_init)
        return store

    def leaves(self) -> dict[str, ad.Tensor]:
        return {n: self.store.tensor(n) for n in self.store.names()}

    # -- text side -----------------------------------------------------------

    def report_feature(self, report: ReportText) -> np.ndarray:
        return self.featurizer.featurize_report(report)

    def text_global(self, leaves: dict, report_feats: np.ndarray) -> ad.Tensor:
        """(B, text_dim) frozen features -> (B, d) unit rows."""
        feats = np.atleast_2d(np.asarray(report_feats, dtype=np.float64))
        row = ad.tensor(feats)
        out = ad.add(ad.matmul(row, leaves["proj.text_glob_w"]), leaves["proj.text_glob_b"])
        return ad.l2_normalize_rows(out)

    def text_channelwise(
        self, leaves: dict, report_feats: np.ndarray, channels: list[ChannelId]
    ) -> ad.Tensor:
        """(B, text_dim) x C channels -> (B*C, d) unit rows, sample-major."""
        feats = np.atleast_2d(np.asarray(report_feats, dtype=np.float64))
        know = np.stack([self.knowledge.feature(ch) for ch in channels])
        n_samples, n_ch = feats.shape[0], len(channels)
        rows = np.concatenate(
            [np.repeat(feats, n_ch, axis=0), np.tile(know, (n_samples, 1))], axis=1
        )
        out = ad.add(ad.matmul(ad.tensor(rows), leaves["proj.text_chan_w"]), leaves["proj.text_chan_b"])
        return ad.l2_normalize_rows(out)

    # -- EEG side ------------------------------------------------------------

    def encode_signals(
        self, leaves: dict, values: np.ndarray, channels: list[ChannelId], reference: str
    ) -> ad.Tensor:
        c = self.config
        return encoder.encode_batch(
            values,
            channels,
            reference,
            leaves,
            patch_len=c.patch_len,
            heads=c.heads,
            posenc_mode=c.posenc_mode,
        )

    def embed_batch(
        self,
        leaves: dict,
        values: np.ndarray,
        channels: list[ChannelId],
        reference: str,
        report_feats: np.ndarray | None = None,
    ) -> BatchEmbeddings:
        """All embeddings for a (B, C, T) batch with shared channel list."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values = values[None]
        n_samples, n_ch = values.shape[0], values.shape[1]
        feats = self.encode_signals(leaves, values, channels, reference)

        eeg_channel = None
        text_channel = None
        if self.config.channelwise:
            eeg_channel = projection.project_eeg_channels(feats, leaves)
            pooled = []
            for b in range(n_samples):
                rows = np.arange(b * n_ch, (b + 1) * n_ch, dtype=np.intp)
                pooled.append(
                    losses.attention_pool(
                        ad.take_rows(eeg_channel, rows), ad.take_rows(feats, rows), leaves
                    )
                )
            eeg_global = pooled[0] if n_samples == 1 else ad.concat(pooled, axis=0)
        else:
            pooled = []
            for b in range(n_samples):
                rows = np.arange(b * n_ch, (b + 1) * n_ch, dtype=np.intp)
                pooled.append(projection.project_pooled(ad.take_rows(feats, rows), leaves))
            eeg_global = pooled[0] if n_samples == 1 else ad.concat(pooled, axis=0)

        text_global = None
        if report_feats is not None:
            text_global = self.text_global(leaves, report_feats)
            if self.config.channelwise:
                text_channel = self.text_channelwise(leaves, report_feats, channels)

        return BatchEmbeddings(
            channel_feats=feats,
            eeg_channel=eeg_channel,
            text_channel=text_channel,
            eeg_global=eeg_global,
            text_global=text_global,
            n_samples=n_samples,
            n_channels=n_ch,
        )

    # -- losses ----------------------------------------------------------------

    def batch_loss(
        self,
        leaves: dict,
        values: np.ndarray,
        channels: list[ChannelId],
        reference: str,
        report_feats: np.ndarray,
        channel_weight: float,
        n_channel_samples: int,
        use_channel_loss: bool,
        rng: np.random.Generator,
    ) -> tuple[ad.Tensor, dict]:
        emb = self.embed_batch(leaves, values, channels, reference, report_feats)
        log_tau = leaves["loss.log_tau"]
        sample_loss = losses.sample_contrastive_loss(emb.eeg_global, emb.text_global, log_tau)

        channel_loss = ad.tensor(0.0)
        if use_channel_loss and self.config.channelwise:
            picks = []
            for b in range(emb.n_samples):
                idx = losses.sample_channel_indices(emb.n_channels, n_channel_samples, rng)
                picks.append(idx + b * emb.n_channels)
            picks = np.concatenate(picks)
            channel_loss = losses.channel_contrastive_loss(
                ad.take_rows(emb.eeg_channel, picks),
                ad.take_rows(emb.text_channel, picks),
                log_tau,
            )
        total = losses.alignment_loss(sample_loss, channel_loss, channel_weight if use_channel_loss else 0.0)
        parts = {
            "sample_loss": float(sample_loss.value),
            "channel_loss": float(channel_loss.value),
            "tau": float(np.exp(self.store.value("loss.log_tau"))),
        }
        return total, parts

    # -- inference over Sample lists -------------------------------------------

    def embed_samples(
        self, samples: list[Sample], batch_size: int = 64, with_channels: bool = False
    ) -> dict:
        """Frozen-forward embeddings for a homogeneous sample list.

        Returns global embeddings (n, d) plus, if requested and available,
        per-channel embeddings (n, C, d).
        """
        if not samples:
            raise ValueError("embed_samples: empty sample list")
        channels = list(samples[0].channels)
        reference = samples[0].reference
        names = [c.name for c in channels]
        for s in samples:
            if [c.name for c in s.channels] != names or s.reference != reference:
                raise ValueError("embed_samples: samples must share one montage")

        global_rows, channel_rows = [], []
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            values = np.stack([s.values for s in chunk])
            leaves = self.leaves()
            emb = self.embed_batch(leaves, values, channels, reference)
            global_rows.append(emb.eeg_global.value.copy())
            if with_channels and emb.eeg_channel is not None:
                channel_rows.append(
                    emb.eeg_channel.value.reshape(len(chunk), len(channels), -1).copy()
                )
        out = {"global": np.concatenate(global_rows), "channels": names}
        if channel_rows:
            out["channel"] = np.concatenate(channel_rows)
        return out

    def embed_text(self, text: str) -> np.ndarray:
        """Report-only text path: frozen featurizer then the global head."""
        leaves = self.leaves()
        return self.text_global(leaves, self.featurizer.featurize_text(text)[None, :]).value[0].copy()

    def embed_reports(self, reports: list[ReportText]) -> np.ndarray:
        feats = np.stack([self.featurizer.featurize_report(r) for r in reports])
        leaves = self.leaves()
        return self.text_global(leaves, feats).value.copy()

    # -- persistence ------------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model_config": self.config.describe(), **(extra_meta or {})}
        ad.save_checkpoint(self.store, path, meta)

    @classmethod
    def load(cls, path, knowledge: ChannelKnowledgeLibrary | None = None) -> tuple["AlignmentModel", dict]:
        store, meta = ad.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["model_config"])
        model = cls(config, store=store, knowledge=knowledge)
        return model, meta
