"""Label prototypes from synthetic report ensembles.

Training reports are dissected into their sections and pooled per label
value; a synthetic report draws one segment per section uniformly and a
label prototype is the renormalized mean of the text embeddings of K such
reports. Pools only ever see training-split reports of their own label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .textfeat import SECTION_SCHEMA, ReportText


@dataclass
class SectionPool:
    label: str
    pools: dict[str, list[str]]


@dataclass
class LabelPrototype:
    label: str
    embedding: np.ndarray
    ensemble_size: int


def build_pools(reports: list[ReportText], labels: list[str]) -> dict[str, SectionPool]:
    """Segment pools per label value, deduplicated verbatim, order-preserving."""
    if len(reports) != len(labels):
        raise ValueError("reports and labels must align")
    pools: dict[str, dict[str, list[str]]] = {}
    seen: dict[str, dict[str, set]] = {}
    for report, label in zip(reports, labels):
        lp = pools.setdefault(label, {s: [] for s in SECTION_SCHEMA})
        ls = seen.setdefault(label, {s: set() for s in SECTION_SCHEMA})
        for section in SECTION_SCHEMA:
            text = report.sections.get(section, "")
            if text and text not in ls[section]:
                ls[section].add(text)
                lp[section].append(text)
    out = {}
    for label, lp in pools.items():
        for section, segments in lp.items():
            if not segments:
                raise ValueError(f"label '{label}' has an empty pool for section '{section}'")
        out[label] = SectionPool(label=label, pools=lp)
    return out


def synthesize_report(pool: SectionPool, rng: np.random.Generator) -> ReportText:
    """One segment per section, drawn uniformly, concatenated in schema order."""
    sections = {}
    for section in SECTION_SCHEMA:
        segments = pool.pools[section]
        sections[section] = segments[int(rng.integers(0, len(segments)))]
    return ReportText(sections)


def label_prototype(pool: SectionPool, ensemble_size: int, rng: np.random.Generator, embed_fn) -> LabelPrototype:
    """Renormalized mean of `ensemble_size` synthetic-report embeddings.

    `embed_fn` maps a report text string to a unit-norm embedding (the
    report-only text path of a trained model).
    """
    if ensemble_size < 1:
        raise ValueError(f"ensemble size must be >= 1, got {ensemble_size}")
    acc = None
    for _ in range(ensemble_size):
        vec = np.asarray(embed_fn(synthesize_report(pool, rng).text()), dtype=np.float64)
        acc = vec if acc is None else acc + vec
    mean = acc / ensemble_size
    return LabelPrototype(
        label=pool.label, embedding=mean / np.sqrt(mean @ mean), ensemble_size=ensemble_size
    )


def single_prompt_prototype(label: str, prompt: str, embed_fn) -> LabelPrototype:
    vec = np.asarray(embed_fn(prompt), dtype=np.float64)
    return LabelPrototype(label=label, embedding=vec / np.sqrt(vec @ vec), ensemble_size=1)


def prompt_similarity_report(
    prototypes_by_method: dict[str, dict[str, LabelPrototype]],
    reports: list[ReportText],
    labels: list[str],
    embed_fn,
) -> list[dict]:
    """Per-label mean/std cosine similarity rows, one per (label, method).

    Prototype and report embeddings are unit-norm, so the dot product is
    the cosine similarity.
    """
    if not reports:
        raise ValueError("prompt_similarity_report: empty validation set")
    embeds = np.stack([np.asarray(embed_fn(r.text()), dtype=np.float64) for r in reports])
    label_arr = np.asarray(labels)
    rows = []
    for method in sorted(prototypes_by_method):
        for label in sorted(prototypes_by_method[method]):
            proto = prototypes_by_method[method][label]
            mask = label_arr == label
            sims = embeds[mask] @ proto.embedding
            rows.append(
                {
                    "label": label,
                    "method": method,
                    "mean": float(sims.mean()),
                    "std": float(sims.std()),
                    "count": int(mask.sum()),
                }
            )
    return rows
