"""Synthetic EEG-text corpus with controllable, recoverable label structure.

Each subject gets one record: a multichannel signal built from band-limited
sinusoids plus Gaussian noise, where the three binary labels shift the
amplitude of one band over one scalp region, and a sectioned report whose
wording is conditioned on the same labels (with label-irrelevant distractor
sentences mixed in). Labels are balanced over the corpus and splits are
subject-disjoint, stratified by label combination.
"""

from __future__ import annotations

import base64
import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import ChannelId, Montage, parse_channel_name, standard_montage
from .textfeat import ReportText

CORPUS_FORMAT = "eegalign-corpus"
CORPUS_VERSION = 1

TASKS = ("pathological", "gender", "age_group")
TASK_VALUES = {
    "pathological": ("normal", "abnormal"),
    "gender": ("female", "male"),
    "age_group": ("under50", "over50"),
}

BANDS = {"slow": 3.0, "alpha": 10.0, "fast": 22.0}
BASE_AMPLITUDE = {"slow": 0.6, "alpha": 1.0, "fast": 0.8}

# (task, value) -> [(region, band, amplitude multiplier)]
#
# Each label value relocates one band's boost to a different scalp region,
# with multipliers chosen so the two values add the same total band power
# over the 19-channel montage (region sizes: frontopolar 2, frontal 5,
# central 3, parietal 3, occipital 2, temporal 4). Order-free aggregate
# statistics therefore carry almost no label signal: classifiers must know
# which channel is which.
DEFAULT_EFFECTS = {
    ("pathological", "normal"): [("central", "slow", 2.474)],
    ("pathological", "abnormal"): [("temporal", "slow", 2.2)],
    ("gender", "female"): [("occipital", "alpha", 2.6), ("parietal", "alpha", 2.6)],
    ("gender", "male"): [("frontal", "alpha", 2.261), ("frontopolar", "alpha", 2.261)],
    ("age_group", "under50"): [("occipital", "fast", 2.768), ("parietal", "fast", 2.768)],
    ("age_group", "over50"): [("frontal", "fast", 2.4), ("frontopolar", "fast", 2.4)],
}

_HISTORY_GENDER = {
    "female": ("woman", "female patient", "lady"),
    "male": ("man", "male patient", "gentleman"),
}
_HISTORY_AGE_DESCRIPTOR = {
    "under50": ("a young adult", "early in adult life", "of younger working age"),
    "over50": ("an older adult", "in the later decades of life", "of advanced age"),
}
_HISTORY_GENDER_SENTENCE = {
    "female": (
        "Her previous neuroimaging was unremarkable.",
        "Her family history is noncontributory.",
        "She denies prior seizures.",
    ),
    "male": (
        "His previous neuroimaging was unremarkable.",
        "His family history is noncontributory.",
        "He denies prior seizures.",
    ),
}
_HISTORY_COMPLAINTS = (
    "episodic headaches",
    "dizziness",
    "a single syncopal event",
    "memory complaints",
    "sleep disturbance",
    "recurrent staring spells",
)
_MEDICATIONS = (
    "No current medications.",
    "Keppra 500 mg twice daily.",
    "Aspirin daily.",
    "Lisinopril for hypertension.",
    "Multivitamin only.",
    "Metformin and atorvastatin.",
)
_DESCRIPTION_BY_PATHOLOGY = {
    "normal": (
        "The posterior dominant rhythm is symmetric and well regulated.",
        "Normal background activity without focal slowing.",
        "Well organized background with a reactive posterior rhythm.",
        "Background activity is within normal limits for age.",
    ),
    "abnormal": (
        "Excess slow wave activity is seen over the temporal regions.",
        "Intermittent temporal slowing is present bilaterally.",
        "Focal slowing is noted over the temporal chains.",
        "Runs of rhythmic temporal delta activity are recorded.",
    ),
}
_DESCRIPTION_FILLER = (
    "Photic stimulation produced no abnormal response.",
    "Hyperventilation was performed for three minutes.",
    "Drowsiness was captured during the recording.",
    "The record was obtained in the outpatient laboratory.",
)
_DESCRIPTION_PRONOUN = {
    "female": ("She remained awake throughout the study.", "She tolerated the recording well."),
    "male": ("He remained awake throughout the study.", "He tolerated the recording well."),
}
_IMPRESSION_BY_PATHOLOGY = {
    "normal": (
        "Normal EEG.",
        "EEG within normal limits.",
        "No epileptiform abnormalities identified.",
    ),
    "abnormal": (
        "Abnormal EEG due to temporal slowing.",
        "Abnormal record with excess slow activity.",
        "Abnormal EEG reflecting temporal dysfunction.",
    ),
}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    """One paired record: signals, sectioned report, label map.

    A subject may contribute several segments (distinct signal realizations
    sharing the subject's report); splits stay subject-disjoint.
    """

    subject: int
    channels: tuple[ChannelId, ...]
    reference: str
    values: np.ndarray  # (C, T)
    sample_rate: float
    report: ReportText
    labels: dict[str, str]
    segment: int = 0

    def montage(self) -> Montage:
        return Montage(self.channels, self.reference)


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 512
    segments_per_subject: int = 3
    montage: Montage = field(default_factory=standard_montage)
    n_timepoints: int = 256
    sample_rate: float = 128.0
    noise_sigma: float = 0.3
    amp_jitter: float = 0.1
    effects: dict = field(default_factory=lambda: dict(DEFAULT_EFFECTS))
    base_amplitude: dict = field(default_factory=lambda: dict(BASE_AMPLITUDE))
    bands: dict = field(default_factory=lambda: dict(BANDS))
    split_weights: tuple[int, int, int] = (8, 2, 2)

    def describe(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "segments_per_subject": self.segments_per_subject,
            "montage": self.montage.names(),
            "reference": self.montage.reference,
            "n_timepoints": self.n_timepoints,
            "sample_rate": self.sample_rate,
            "noise_sigma": self.noise_sigma,
            "amp_jitter": self.amp_jitter,
            "split_weights": list(self.split_weights),
        }

    def content_hash(self) -> str:
        blob = json.dumps(
            {
                **self.describe(),
                "effects": {f"{k[0]}.{k[1]}": v for k, v in sorted(self.effects.items())},
                "base_amplitude": self.base_amplitude,
                "bands": self.bands,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _amplitude(config: GeneratorConfig, labels: dict[str, str], region: str, band: str) -> float:
    amp = config.base_amplitude[band]
    for task, value in labels.items():
        for eff_region, eff_band, mult in config.effects.get((task, value), ()):
            if eff_region == region and eff_band == band:
                amp *= mult
    return amp


def _synthesize_signal(config: GeneratorConfig, labels: dict[str, str], rng: np.random.Generator) -> np.ndarray:
    t = np.arange(config.n_timepoints) / config.sample_rate
    rows = []
    for ch in config.montage.channels:
        # generation always happens at the electrode level; derivations come later
        attrs = parse_channel_name(ch.electrodes[0])
        row = np.zeros_like(t)
        for band, freq in config.bands.items():
            amp = _amplitude(config, labels, attrs.region, band)
            if config.amp_jitter > 0:
                amp *= float(np.exp(rng.normal(0.0, config.amp_jitter)))
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            row = row + amp * np.sin(2.0 * np.pi * freq * t + phase)
        if config.noise_sigma > 0:
            row = row + rng.normal(0.0, config.noise_sigma, size=row.shape)
        rows.append(row)
    return np.stack(rows)


def _synthesize_report(labels: dict[str, str], rng: np.random.Generator) -> ReportText:
    def pick(seq):
        return seq[int(rng.integers(0, len(seq)))]

    if labels["age_group"] == "under50":
        age = int(rng.integers(19, 50))
    else:
        age = int(rng.integers(50, 90))
    history = (
        f"A {age}-year-old {pick(_HISTORY_GENDER[labels['gender']])}, "
        f"{pick(_HISTORY_AGE_DESCRIPTOR[labels['age_group']])}, "
        f"referred for evaluation of {pick(_HISTORY_COMPLAINTS)}. "
        f"{pick(_HISTORY_GENDER_SENTENCE[labels['gender']])}"
    )
    description = pick(_DESCRIPTION_BY_PATHOLOGY[labels["pathological"]])
    description = f"{description} {pick(_DESCRIPTION_PRONOUN[labels['gender']])}"
    if rng.random() < 0.7:
        description = f"{description} {pick(_DESCRIPTION_FILLER)}"
    return ReportText(
        {
            "clinical_history": history,
            "medications": pick(_MEDICATIONS),
            "description": description,
            "impression": pick(_IMPRESSION_BY_PATHOLOGY[labels["pathological"]]),
        }
    )


def _split_pattern(weights: tuple[int, int, int]) -> list[int]:
    return [s for s, w in enumerate(weights) for _ in range(w)]


def generate_corpus(
    config: GeneratorConfig, rng: np.random.Generator
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Generate balanced, subject-disjoint train/val/test splits."""
    if config.n_subjects < 12:
        raise CorpusError(f"need at least 12 subjects for an 8/2/2 split, got {config.n_subjects}")
    if config.n_timepoints < 1 or config.sample_rate <= 0:
        raise CorpusError("invalid signal dimensions")
    if config.segments_per_subject < 1:
        raise CorpusError("segments_per_subject must be >= 1")

    combos = list(itertools.product(*(TASK_VALUES[t] for t in TASKS)))
    per_combo = [config.n_subjects // len(combos)] * len(combos)
    for i in range(config.n_subjects % len(combos)):
        per_combo[i] += 1
    if min(per_combo) < 1:
        raise CorpusError(
            f"{config.n_subjects} subjects cannot cover all {len(combos)} balanced label combinations"
        )

    # split assignment walks a repeating 8/2/2 pattern per combo, with a
    # combo-dependent offset (stride coprime to the pattern length) so split
    # membership never aligns with a label bit; subjects stay disjoint and
    # every split is near-balanced
    pattern = _split_pattern(config.split_weights)
    stride = 5
    subject_plan: list[tuple[dict[str, str], int]] = []
    for ci, (combo, count) in enumerate(zip(combos, per_combo)):
        offset = (ci * stride) % len(pattern)
        for j in range(count):
            subject_plan.append((dict(zip(TASKS, combo)), pattern[(offset + j) % len(pattern)]))

    child_rngs = rng.spawn(config.n_subjects)
    splits: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    for subject, (labels, split_idx) in enumerate(subject_plan):
        sub_rng = child_rngs[subject]
        report = _synthesize_report(labels, sub_rng)
        for segment in range(config.segments_per_subject):
            splits[split_idx].append(
                Sample(
                    subject=subject,
                    channels=config.montage.channels,
                    reference=config.montage.reference,
                    values=_synthesize_signal(config, labels, sub_rng),
                    sample_rate=config.sample_rate,
                    report=report,
                    labels=dict(labels),
                    segment=segment,
                )
            )
    for part in splits:
        part.sort(key=lambda s: (s.subject, s.segment))
    return splits


def rederive_montage(sample: Sample, target: Montage) -> Sample:
    """Re-express a sample in another montage.

    Unipolar targets select (and reorder) source rows; bipolar derivations
    are exact row differences of their constituents.
    """
    row_by_name = {ch.name: i for i, ch in enumerate(sample.channels)}
    rows = []
    for ch in target.channels:
        for electrode in ch.electrodes:
            if electrode not in row_by_name:
                raise CorpusError(f"montage rederivation: source lacks electrode '{electrode}'")
        if ch.kind == "unipolar":
            rows.append(sample.values[row_by_name[ch.electrodes[0]]])
        else:
            rows.append(
                sample.values[row_by_name[ch.electrodes[0]]] - sample.values[row_by_name[ch.electrodes[1]]]
            )
    return replace(sample, channels=target.channels, reference=target.reference, values=np.stack(rows))


# ---------------------------------------------------------------------------
# corpus files: one JSON header line, then one JSON record per sample

def _encode_values(values: np.ndarray) -> dict:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_values(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(rec["shape"]).copy()


def write_corpus(samples: list[Sample], path, header_extra: dict | None = None) -> None:
    header = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "n_samples": len(samples),
        **(header_extra or {}),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for s in samples:
            rec = {
                "subject": s.subject,
                "segment": s.segment,
                "channels": [c.name for c in s.channels],
                "reference": s.reference,
                "sample_rate": s.sample_rate,
                "labels": s.labels,
                "report": dict(s.report.sections),
                "signal": _encode_values(s.values),
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus(path) -> tuple[list[Sample], dict | None]:
    """Read a corpus file; returns (samples, header). Empty file -> ([], None)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        return [], None
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorpusError(f"line 1: corrupted corpus header ({e})") from e
    if header.get("format") != CORPUS_FORMAT or header.get("version") != CORPUS_VERSION:
        raise CorpusError(
            f"unsupported corpus format/version: {header.get('format')}/{header.get('version')}"
        )
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sample = Sample(
                subject=rec["subject"],
                channels=tuple(ChannelId.from_name(n) for n in rec["channels"]),
                reference=rec["reference"],
                values=_decode_values(rec["signal"]),
                sample_rate=rec["sample_rate"],
                report=ReportText(rec["report"]),
                labels=rec["labels"],
                segment=rec.get("segment", 0),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise CorpusError(f"line {lineno}: corrupted corpus record ({e})") from e
        samples.append(sample)
    return samples, header
