"""Run configuration: flat dotted-key text files over typed defaults.

The format is `key = value` lines with `#` comments. Unknown keys are
rejected, and every value is validated against the owning module's
preconditions before any compute starts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

DEFAULTS: dict[str, object] = {
    # synthetic corpus
    "corpus.n_subjects": 512,
    "corpus.segments_per_subject": 3,
    "corpus.montage": "standard19",
    "corpus.reference": "average",
    "corpus.n_timepoints": 256,
    "corpus.sample_rate": 128.0,
    "corpus.noise_sigma": 0.3,
    "corpus.amp_jitter": 0.1,
    # model
    "model.embed_dim": 64,
    "model.attr_dim": 16,
    "model.hidden_dim": 64,
    "model.patch_len": 32,
    "model.heads": 2,
    "model.posenc": "attributes",
    "model.channelwise": True,
    "model.max_channels": 32,
    # training
    "train.epochs": 80,
    "train.batch_size": 64,
    "train.lr": 6e-3,
    "train.channel_weight": 0.5,
    "train.channel_samples": 3,
    "train.p_remove": 0.5,
    "train.r_max": 0.8,
    "train.tau_init": 0.07,
    "train.tau_min": 0.01,
    "train.use_channel_loss": True,
    "train.time_shift": False,
    # prompts
    "prompts.ensemble_size": 64,
    "prompts.single.pathological.normal": "a healthy brain recording without pathology",
    "prompts.single.pathological.abnormal": "a diseased brain recording showing pathology",
    "prompts.single.gender.female": "a recording from a female subject",
    "prompts.single.gender.male": "a recording from a male subject",
    "prompts.single.age_group.under50": "a recording from a younger person",
    "prompts.single.age_group.over50": "a recording from an elderly person",
    # evaluation
    "eval.probe_epochs": 300,
    "eval.probe_lr": 0.05,
    "eval.seeds": 5,
    "eval.shift_remove": "F4,FZ,O1,P3,T3",
    "eval.batch_size": 64,
    "retrieval.ks": "1,5,10,100",
    "retrieval.exclude_self": False,
    # paths
    "paths.data": "corpus",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key '{key}'")
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        default = DEFAULTS[key]
        try:
            if isinstance(default, bool):
                if raw.lower() not in ("true", "false"):
                    raise ValueError("expected true/false")
                value = raw.lower() == "true"
            elif isinstance(default, int):
                value = int(raw)
            elif isinstance(default, float):
                value = float(raw)
            else:
                value = raw
        except ValueError as e:
            raise ConfigError(f"config key '{key}': cannot parse '{raw}' ({e})") from e
        self.values[key] = value

    def validate(self) -> None:
        v = self.values
        checks = [
            (v["corpus.n_subjects"] >= 12, "corpus.n_subjects must be >= 12"),
            (v["corpus.segments_per_subject"] >= 1, "corpus.segments_per_subject must be >= 1"),
            (v["corpus.montage"] == "standard19", "corpus.montage must be 'standard19'"),
            (v["corpus.reference"] in ("average", "linked_ear"), "corpus.reference must be average or linked_ear"),
            (v["corpus.n_timepoints"] >= 1, "corpus.n_timepoints must be positive"),
            (v["corpus.n_timepoints"] % v["model.patch_len"] == 0, "corpus.n_timepoints must be divisible by model.patch_len"),
            (v["corpus.sample_rate"] > 0, "corpus.sample_rate must be positive"),
            (v["corpus.noise_sigma"] >= 0, "corpus.noise_sigma must be non-negative"),
            (v["model.embed_dim"] >= 2, "model.embed_dim must be >= 2"),
            (v["model.embed_dim"] % v["model.heads"] == 0, "model.embed_dim must be divisible by model.heads"),
            (v["model.posenc"] in ("attributes", "index"), "model.posenc must be attributes or index"),
            (v["model.max_channels"] >= 1, "model.max_channels must be >= 1"),
            (v["train.epochs"] >= 1, "train.epochs must be >= 1"),
            (v["train.batch_size"] >= 2, "train.batch_size must be >= 2"),
            (v["train.lr"] > 0, "train.lr must be positive"),
            (v["train.channel_weight"] >= 0, "train.channel_weight must be non-negative"),
            (v["train.channel_samples"] >= 1, "train.channel_samples must be >= 1"),
            (0.0 <= v["train.p_remove"] <= 1.0, "train.p_remove must be in [0, 1]"),
            (0.0 < v["train.r_max"] <= 1.0, "train.r_max must be in (0, 1]"),
            (v["train.tau_init"] > 0, "train.tau_init must be positive"),
            (v["train.tau_min"] > 0, "train.tau_min must be positive"),
            (v["prompts.ensemble_size"] >= 1, "prompts.ensemble_size must be >= 1"),
            (v["eval.probe_epochs"] >= 1, "eval.probe_epochs must be >= 1"),
            (v["eval.probe_lr"] > 0, "eval.probe_lr must be positive"),
            (v["eval.seeds"] >= 1, "eval.seeds must be >= 1"),
            (v["eval.batch_size"] >= 1, "eval.batch_size must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.retrieval_ks()
        except ValueError as e:
            raise ConfigError(f"retrieval.ks: {e}") from e
        for name in self.shift_channels():
            if not name:
                raise ConfigError("eval.shift_remove contains an empty channel name")

    def retrieval_ks(self) -> list[int]:
        ks = [int(p) for p in str(self.values["retrieval.ks"]).split(",") if p.strip()]
        if not ks or any(k < 1 for k in ks):
            raise ValueError("need a comma-separated list of positive integers")
        return ks

    def shift_channels(self) -> list[str]:
        return [p.strip().upper() for p in str(self.values["eval.shift_remove"]).split(",") if p.strip()]

    def single_prompts(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {}
        for key, value in self.values.items():
            if key.startswith("prompts.single."):
                _, _, task, label = key.split(".")
                out.setdefault(task, {})[label] = str(value)
        return out

    def content_hash(self) -> str:
        blob = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
                key, _, raw = stripped.partition("=")
                cfg.set(key.strip(), raw.strip())
    for key, raw in (overrides or {}).items():
        cfg.set(key, raw)
    cfg.validate()
    return cfg
