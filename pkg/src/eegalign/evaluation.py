"""Evaluation protocols: text-based classification, linear probing,
retrieval precision, metric primitives, channel-separation diagnostics.

All similarity-based protocols assume unit-norm embeddings so dot products
are cosines; ties break by stable original order, argmax ties by the
lexicographically smallest label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

logger = logging.getLogger(__name__)


@dataclass
class MetricRecord:
    task: str
    method: str
    metric: str  # balanced_accuracy | auc_pr | precision_at_k | mean_cosine
    value: float
    seed: int
    k: int | None = None
    std: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value must be in [0, 1], got {self.value}")
        if (self.metric == "precision_at_k") != (self.k is not None):
            raise ValueError("k must be present exactly for precision_at_k records")


def balanced_accuracy(preds, labels) -> float:
    """Unweighted mean of per-class recall over the classes present in `labels`."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("balanced_accuracy: empty label list")
    classes = sorted(set(labels.tolist()))
    stray = set(preds.tolist()) - set(classes)
    if stray:
        raise ValueError(f"balanced_accuracy: predicted class absent from labels: {sorted(stray)}")
    recalls = []
    for c in classes:
        mask = labels == c
        recalls.append(float((preds[mask] == c).mean()))
    return float(np.mean(recalls))


def average_precision(scores, labels) -> float:
    """Step-wise AP: sum of precision times recall increments over the
    descending score order, ties kept in stable original order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if set(labels.tolist()) != {0, 1}:
        raise ValueError("average_precision: need both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return float((precision * hits).sum() / hits.sum())


def text_based_classify(embeds: np.ndarray, prototypes: dict[str, np.ndarray]) -> list[str]:
    """argmax over labels of cosine(embedding, prototype); ties pick the
    lexicographically smallest label (iteration is over sorted labels)."""
    if not prototypes:
        raise ValueError("text_based_classify: no prototypes")
    names = sorted(prototypes)
    proto = np.stack([prototypes[n] for n in names])
    sims = np.atleast_2d(embeds) @ proto.T
    return [names[int(np.argmax(row))] for row in sims]


@dataclass
class ProbeHead:
    classes: list[str]
    weight: np.ndarray  # (dim, n_classes)
    bias: np.ndarray  # (n_classes,)

    def predict(self, embeds: np.ndarray) -> list[str]:
        logits = np.atleast_2d(embeds) @ self.weight + self.bias
        return [self.classes[int(np.argmax(row))] for row in logits]


def train_probe(
    embeds: np.ndarray,
    labels: list[str],
    epochs: int = 200,
    lr: float = 0.05,
) -> ProbeHead:
    """Full-batch softmax cross-entropy on frozen embeddings.

    Only the linear head is optimized; the embeddings are plain arrays so
    nothing can reach back into the encoder.
    """
    embeds = np.asarray(embeds, dtype=np.float64)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"train_probe: need at least 2 classes, got {classes}")
    y = np.array([classes.index(l) for l in labels])
    onehot = np.zeros((len(y), len(classes)))
    onehot[np.arange(len(y)), y] = 1.0

    store = ad.ParameterStore()
    store.add("w", np.zeros((embeds.shape[1], len(classes))))
    store.add("b", np.zeros(len(classes)))
    x = embeds
    for _ in range(epochs):
        leaves = {n: store.tensor(n) for n in store.names()}
        logits = ad.add(ad.matmul(ad.tensor(x), leaves["w"]), leaves["b"])
        logp = ad.log_softmax_rows(logits)
        loss = ad.scale(ad.sum_all(ad.mul(logp, ad.tensor(onehot))), -1.0 / len(y))
        ad.backward(loss)
        store.adam_step(lr=lr)
    return ProbeHead(classes=classes, weight=store.value("w").copy(), bias=store.value("b").copy())


def retrieve(query_embed: np.ndarray, index_embeds: np.ndarray, k: int) -> np.ndarray:
    """Top-k index ids by cosine similarity, descending, stable tie order."""
    index_embeds = np.atleast_2d(index_embeds)
    if k < 1 or k > index_embeds.shape[0]:
        raise ValueError(f"retrieve: k={k} out of range for index of size {index_embeds.shape[0]}")
    sims = index_embeds @ np.asarray(query_embed, dtype=np.float64)
    return np.argsort(-sims, kind="stable")[:k]


def precision_at_k(
    query_embed: np.ndarray, query_label: str, index_embeds: np.ndarray, index_labels, k: int
) -> float:
    top = retrieve(query_embed, index_embeds, k)
    index_labels = np.asarray(index_labels)
    return float((index_labels[top] == query_label).mean())


def retrieval_precision(
    query_embeds: np.ndarray, query_labels, index_embeds: np.ndarray, index_labels, ks
) -> dict[int, float]:
    """Mean Precision@K over all queries, for each requested K."""
    out = {}
    for k in ks:
        vals = [
            precision_at_k(q, ql, index_embeds, index_labels, k)
            for q, ql in zip(np.atleast_2d(query_embeds), query_labels)
        ]
        out[int(k)] = float(np.mean(vals))
    return out


def channel_separation_report(channel_embeds_by_id: dict[str, np.ndarray]) -> dict:
    """Within- vs between-channel mean cosine gap plus the full mean-cosine matrix.

    Channels with fewer than two embeddings are excluded (with a warning);
    at least two channel identities must survive.
    """
    kept = {}
    excluded = []
    for name, mat in channel_embeds_by_id.items():
        mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
        if mat.shape[0] < 2:
            excluded.append(name)
            logger.warning("channel %s has < 2 embeddings; excluded from separation report", name)
            continue
        kept[name] = mat / np.sqrt((mat * mat).sum(axis=1, keepdims=True))
    if len(kept) < 2:
        raise ValueError("channel_separation_report: need >= 2 channel identities with >= 2 embeddings")

    names = sorted(kept)
    n = len(names)
    matrix = np.zeros((n, n))
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            sims = kept[a] @ kept[b].T
            if i == j:
                m = sims.shape[0]
                matrix[i, j] = float((sims.sum() - np.trace(sims)) / (m * (m - 1)))
            else:
                matrix[i, j] = float(sims.mean())
    within = float(np.mean(np.diag(matrix)))
    off = matrix[~np.eye(n, dtype=bool)]
    between = float(off.mean())
    return {
        "names": names,
        "matrix": matrix,
        "within": within,
        "between": between,
        "gap": within - between,
        "excluded": excluded,
    }
