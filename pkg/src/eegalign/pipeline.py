"""End-to-end runs: corpus generation, training, the evaluation protocols,
the ablation grid, diagnostics, and the full-model gradient check.

Everything here is deterministic given (config, seed); output files embed
the config hash and seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import evaluation, prompts
from .channels import Montage
from .config import RunConfig
from .datagen import (
    TASKS,
    GeneratorConfig,
    Sample,
    generate_corpus,
    read_corpus,
    rederive_montage,
    write_corpus,
)
from .evaluation import MetricRecord
from .model import AlignmentModel, ModelConfig
from .training import TrainConfig, TrainResult, train_model

SPLITS = ("train", "val", "test")

# ablation rows: nested component stacks, identical seeds across rows
VARIANTS = {
    "plain": {"posenc": "index", "channelwise": False, "channel_loss": False},
    "attr_pe": {"posenc": "attributes", "channelwise": False, "channel_loss": False},
    "attr_pe+chanproj": {"posenc": "attributes", "channelwise": True, "channel_loss": False},
    "full": {"posenc": "attributes", "channelwise": True, "channel_loss": True},
}


def generator_config_from(cfg: RunConfig) -> GeneratorConfig:
    from .channels import standard_montage

    return GeneratorConfig(
        n_subjects=cfg["corpus.n_subjects"],
        segments_per_subject=cfg["corpus.segments_per_subject"],
        montage=standard_montage(cfg["corpus.reference"]),
        n_timepoints=cfg["corpus.n_timepoints"],
        sample_rate=cfg["corpus.sample_rate"],
        noise_sigma=cfg["corpus.noise_sigma"],
        amp_jitter=cfg["corpus.amp_jitter"],
    )


def model_config_from(cfg: RunConfig, variant: str = "full") -> ModelConfig:
    spec = VARIANTS[variant]
    return ModelConfig(
        embed_dim=cfg["model.embed_dim"],
        attr_dim=cfg["model.attr_dim"],
        hidden_dim=cfg["model.hidden_dim"],
        patch_len=cfg["model.patch_len"],
        heads=cfg["model.heads"],
        posenc_mode=spec["posenc"] if variant != "full" else cfg["model.posenc"],
        channelwise=spec["channelwise"] if variant != "full" else cfg["model.channelwise"],
        max_channels=cfg["model.max_channels"],
        tau_init=cfg["train.tau_init"],
        tau_min=cfg["train.tau_min"],
    )


def train_config_from(cfg: RunConfig, variant: str = "full") -> TrainConfig:
    use_channel = cfg["train.use_channel_loss"] if variant == "full" else VARIANTS[variant]["channel_loss"]
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        channel_weight=cfg["train.channel_weight"],
        channel_samples=cfg["train.channel_samples"],
        p_remove=cfg["train.p_remove"],
        r_max=cfg["train.r_max"],
        time_shift=cfg["train.time_shift"],
        use_channel_loss=use_channel,
        ensemble_size=cfg["prompts.ensemble_size"],
    )


# ---------------------------------------------------------------------------
# corpus plumbing

def gen_data(cfg: RunConfig, seed: int, out_dir, force: bool = False) -> dict:
    out = Path(out_dir)
    paths = {split: out / f"{split}.jsonl" for split in SPLITS}
    existing = [str(p) for p in paths.values() if p.exists()]
    if existing and not force:
        raise FileExistsError(f"corpus files exist (use --force to overwrite): {existing}")
    out.mkdir(parents=True, exist_ok=True)
    gcfg = generator_config_from(cfg)
    rng = np.random.default_rng(seed)
    splits = generate_corpus(gcfg, rng)
    header = {
        "seed": seed,
        "config_hash": cfg.content_hash(),
        "generator": gcfg.describe(),
        "generator_hash": gcfg.content_hash(),
    }
    summary = {}
    for split, samples in zip(SPLITS, splits):
        write_corpus(samples, paths[split], {**header, "split": split})
        summary[split] = len(samples)
    return {"paths": {k: str(v) for k, v in paths.items()}, "sizes": summary, "header": header}


def load_corpus_dir(data_dir) -> dict[str, list[Sample]]:
    out = {}
    for split in SPLITS:
        path = Path(data_dir) / f"{split}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing corpus file {path} (run gen-data first)")
        samples, _ = read_corpus(path)
        out[split] = samples
    return out


# ---------------------------------------------------------------------------
# training entry

def run_training(cfg: RunConfig, corpus: dict[str, list[Sample]], seed: int, variant: str = "full") -> TrainResult:
    model = AlignmentModel(model_config_from(cfg, variant), rng=np.random.default_rng([seed, 100]))
    return train_model(model, corpus["train"], corpus["val"], train_config_from(cfg, variant), seed)


def save_run(result: TrainResult, cfg: RunConfig, seed: int, out_dir) -> dict:
    from .training import write_loss_curve

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    result.best_model.save(
        ckpt,
        extra_meta={
            "seed": seed,
            "config_hash": cfg.content_hash(),
            "best_epoch": result.best_epoch,
            "best_score": result.best_score,
        },
    )
    curve = out / "loss_curve.csv"
    write_loss_curve(result.loss_rows, curve)
    val_path = out / "val_scores.csv"
    with open(val_path, "w") as f:
        cols = ["epoch", *TASKS, "mean"]
        f.write(",".join(cols) + "\n")
        for r in result.val_rows:
            f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
    return {"checkpoint": str(ckpt), "loss_curve": str(curve), "val_scores": str(val_path)}


# ---------------------------------------------------------------------------
# prototypes

def ensemble_prototypes(
    model: AlignmentModel, train_samples: list[Sample], ensemble_size: int, seed: int
) -> dict[str, dict[str, np.ndarray]]:
    rng = np.random.default_rng([seed, 301])
    out: dict[str, dict[str, np.ndarray]] = {}
    reports = [s.report for s in train_samples]
    for task in TASKS:
        pools = prompts.build_pools(reports, [s.labels[task] for s in train_samples])
        out[task] = {
            value: prompts.label_prototype(pools[value], ensemble_size, rng, model.embed_text).embedding
            for value in sorted(pools)
        }
    return out


def single_prototypes(model: AlignmentModel, cfg: RunConfig) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    for task, by_label in cfg.single_prompts().items():
        out[task] = {
            label: prompts.single_prompt_prototype(label, text, model.embed_text).embedding
            for label, text in by_label.items()
        }
    return out


# ---------------------------------------------------------------------------
# montage shift benchmark

def shifted_montage(base: Montage, remove_names: list[str], seed: int) -> Montage:
    removed = {n.upper() for n in remove_names}
    missing = removed - set(base.names())
    if missing:
        raise ValueError(f"shift channels not in montage: {sorted(missing)}")
    kept = [c for c in base.channels if c.name not in removed]
    rng = np.random.default_rng([seed, 201])
    order = rng.permutation(len(kept))
    return Montage(tuple(kept[i] for i in order), base.reference)


def heterogeneity_benchmark(
    model: AlignmentModel, cfg: RunConfig, corpus: dict[str, list[Sample]], seed: int
) -> dict:
    """Linear probes trained on full-montage train embeddings, evaluated on
    the test split under the full montage and under a removed-and-permuted
    montage. Returns per-task scores and the retention ratio of the means."""
    batch = cfg["eval.batch_size"]
    train_embeds = model.embed_samples(corpus["train"], batch_size=batch)["global"]
    test_embeds = model.embed_samples(corpus["test"], batch_size=batch)["global"]
    target = shifted_montage(corpus["test"][0].montage(), cfg.shift_channels(), seed)
    shifted = [rederive_montage(s, target) for s in corpus["test"]]
    shifted_embeds = model.embed_samples(shifted, batch_size=batch)["global"]

    scores = {"full": {}, "shifted": {}}
    for task in TASKS:
        labels_train = [s.labels[task] for s in corpus["train"]]
        labels_test = [s.labels[task] for s in corpus["test"]]
        head = evaluation.train_probe(
            train_embeds, labels_train, epochs=cfg["eval.probe_epochs"], lr=cfg["eval.probe_lr"]
        )
        scores["full"][task] = evaluation.balanced_accuracy(head.predict(test_embeds), labels_test)
        scores["shifted"][task] = evaluation.balanced_accuracy(head.predict(shifted_embeds), labels_test)
    full_mean = float(np.mean([scores["full"][t] for t in TASKS]))
    shifted_mean = float(np.mean([scores["shifted"][t] for t in TASKS]))
    return {
        "full": scores["full"],
        "shifted": scores["shifted"],
        "full_mean": full_mean,
        "shifted_mean": shifted_mean,
        "retention": shifted_mean / full_mean if full_mean > 0 else 0.0,
        "shifted_montage": target.names(),
    }


# ---------------------------------------------------------------------------
# full evaluation

def evaluate_model(model: AlignmentModel, cfg: RunConfig, corpus: dict[str, list[Sample]], seed: int) -> dict:
    batch = cfg["eval.batch_size"]
    test = corpus["test"]
    test_embeds = model.embed_samples(test, batch_size=batch)["global"]

    ens = ensemble_prototypes(model, corpus["train"], cfg["prompts.ensemble_size"], seed)
    sing = single_prototypes(model, cfg)

    records: list[MetricRecord] = []
    text_scores: dict[str, dict[str, float]] = {"ensemble": {}, "single": {}}
    for task in TASKS:
        labels = [s.labels[task] for s in test]
        for method, protos in (("ensemble", ens[task]), ("single", sing[task])):
            preds = evaluation.text_based_classify(test_embeds, protos)
            score = evaluation.balanced_accuracy(preds, labels)
            text_scores[method][task] = score
            records.append(
                MetricRecord(task=task, method=f"text_{method}", metric="balanced_accuracy", value=score, seed=seed)
            )

    # prompt-quality comparison on validation reports
    similarity_rows = []
    for task in TASKS:
        proto_map = {
            "ensemble": {
                v: prompts.LabelPrototype(v, ens[task][v], cfg["prompts.ensemble_size"]) for v in ens[task]
            },
            "single": {v: prompts.LabelPrototype(v, sing[task][v], 1) for v in sing[task]},
        }
        rows = prompts.prompt_similarity_report(
            proto_map,
            [s.report for s in corpus["val"]],
            [s.labels[task] for s in corpus["val"]],
            model.embed_text,
        )
        for r in rows:
            r["task"] = task
            similarity_rows.append(r)
            records.append(
                MetricRecord(
                    task=task,
                    method=f"prompt_{r['method']}_{r['label']}",
                    metric="mean_cosine",
                    value=max(0.0, min(1.0, r["mean"])),
                    seed=seed,
                )
            )

    # linear probes, full montage and the channel-shift benchmark
    hb = heterogeneity_benchmark(model, cfg, corpus, seed)
    for task in TASKS:
        records.append(
            MetricRecord(task=task, method="probe_full", metric="balanced_accuracy", value=hb["full"][task], seed=seed)
        )
        records.append(
            MetricRecord(
                task=task, method="probe_shifted", metric="balanced_accuracy", value=hb["shifted"][task], seed=seed
            )
        )

    # probe AUC-PR on the pathological task (positive class: abnormal)
    train_embeds = model.embed_samples(corpus["train"], batch_size=batch)["global"]
    for task, positive in (("pathological", "abnormal"),):
        labels_train = [s.labels[task] for s in corpus["train"]]
        head = evaluation.train_probe(
            train_embeds, labels_train, epochs=cfg["eval.probe_epochs"], lr=cfg["eval.probe_lr"]
        )
        pos_col = head.classes.index(positive)
        logits = test_embeds @ head.weight + head.bias
        scores = logits[:, pos_col] - logits.max(axis=1)  # margin of the positive class
        y = np.array([1 if s.labels[task] == positive else 0 for s in test])
        records.append(
            MetricRecord(
                task=task,
                method="probe_full",
                metric="auc_pr",
                value=evaluation.average_precision(scores, y),
                seed=seed,
            )
        )

    return {
        "records": records,
        "text_scores": text_scores,
        "similarity_rows": similarity_rows,
        "heterogeneity": hb,
        "prototypes": {"ensemble": ens, "single": sing},
    }


def evaluate_retrieval(model: AlignmentModel, cfg: RunConfig, corpus: dict[str, list[Sample]], seed: int) -> dict:
    """Queries are test EEG embeddings; the index is training-split report
    embeddings. Precision@K counts label matches among the top K."""
    batch = cfg["eval.batch_size"]
    index_embeds = model.embed_reports([s.report for s in corpus["train"]])
    query_embeds = model.embed_samples(corpus["test"], batch_size=batch)["global"]
    ks = cfg.retrieval_ks()
    bad = [k for k in ks if k > index_embeds.shape[0]]
    if bad:
        raise ValueError(f"retrieval k={bad[0]} exceeds index size {index_embeds.shape[0]}")
    records = []
    out = {}
    for task in TASKS:
        q_labels = [s.labels[task] for s in corpus["test"]]
        i_labels = [s.labels[task] for s in corpus["train"]]
        precisions = evaluation.retrieval_precision(query_embeds, q_labels, index_embeds, i_labels, ks)
        base = float(np.mean([np.mean(np.asarray(i_labels) == l) for l in q_labels]))
        out[task] = {"precision": precisions, "base_rate": base}
        for k, p in precisions.items():
            records.append(
                MetricRecord(task=task, method="retrieval", metric="precision_at_k", value=p, seed=seed, k=k)
            )
    return {"records": records, "by_task": out, "index_size": int(index_embeds.shape[0])}


def diagnose_model(model: AlignmentModel, cfg: RunConfig, corpus: dict[str, list[Sample]], seed: int) -> dict:
    """Channel-wise embedding dump plus the separation report and mean-cosine matrix."""
    if not model.config.channelwise:
        raise ValueError("diagnostics need channel-wise embeddings (model.channelwise=true)")
    batch = cfg["eval.batch_size"]
    emb = model.embed_samples(corpus["test"], batch_size=batch, with_channels=True)
    by_channel = {name: emb["channel"][:, i, :] for i, name in enumerate(emb["channels"])}
    report = evaluation.channel_separation_report(by_channel)
    return {"by_channel": by_channel, "separation": report, "channels": emb["channels"]}


# ---------------------------------------------------------------------------
# ablation grid

def ablation_matrix(cfg: RunConfig, corpus: dict[str, list[Sample]], seeds: list[int]) -> dict:
    """One training + heterogeneity evaluation per (variant, seed); rows are
    aggregated as mean/std of the shifted-montage probe score per task."""
    detail: dict[str, dict[str, dict[str, float]]] = {v: {} for v in VARIANTS}
    models: dict[tuple[str, int], AlignmentModel] = {}
    for variant in VARIANTS:
        for seed in seeds:
            result = run_training(cfg, corpus, seed, variant=variant)
            hb = heterogeneity_benchmark(result.best_model, cfg, corpus, seed)
            detail[variant][str(seed)] = {
                **{f"full.{t}": hb["full"][t] for t in TASKS},
                **{f"shifted.{t}": hb["shifted"][t] for t in TASKS},
                "full_mean": hb["full_mean"],
                "shifted_mean": hb["shifted_mean"],
                "retention": hb["retention"],
            }
            models[(variant, seed)] = result.best_model
    records = []
    for variant in VARIANTS:
        for task in TASKS:
            vals = [detail[variant][str(s)][f"shifted.{task}"] for s in seeds]
            records.append(
                MetricRecord(
                    task=task,
                    method=f"ablation_{variant}",
                    metric="balanced_accuracy",
                    value=float(np.mean(vals)),
                    std=float(np.std(vals)),
                    seed=seeds[0],
                )
            )
    return {"records": records, "detail": detail, "models": models, "seeds": seeds}


# ---------------------------------------------------------------------------
# gradient check over the full objective

def gradient_check_full(
    cfg: RunConfig,
    seed: int,
    rounds: int = 20,
    step: float = 1e-5,
    tol: float = 1e-4,
    components_per_param: int = 3,
) -> list[ad.GradCheckReport]:
    """Finite-difference check of the combined objective through the whole
    model (positional encoding, encoder, projections, pooling, both losses).

    Each round uses a fresh tiny model and batch; a random subset of
    components per parameter is probed.
    """
    from .channels import standard_montage
    from .textfeat import ReportText

    reports = [
        ReportText(
            {
                "clinical_history": "A 44-year-old woman referred for headaches.",
                "medications": "No current medications.",
                "description": "Background is within normal limits.",
                "impression": "Normal EEG.",
            }
        ),
        ReportText(
            {
                "clinical_history": "A 71-year-old man with prior stroke.",
                "medications": "Aspirin daily.",
                "description": "Temporal slowing is present.",
                "impression": "Abnormal EEG.",
            }
        ),
    ]
    montage = standard_montage()
    channels = list(montage.channels[:3])
    reference = montage.reference
    patch_len = cfg["model.patch_len"]
    t_len = 2 * patch_len
    reports_feats = None

    out = []
    for r in range(rounds):
        rng = np.random.default_rng([seed, 400 + r])
        model = AlignmentModel(model_config_from(cfg, "full"), rng=rng)
        if reports_feats is None:
            reports_feats = np.stack([model.report_feature(rep) for rep in reports])
        values = rng.normal(0.0, 1.0, (2, len(channels), t_len))
        chan_rng_state = rng.bit_generator.state

        def loss_fn():
            chan_rng = np.random.default_rng()
            chan_rng.bit_generator.state = chan_rng_state
            leaves = model.leaves()
            loss, _ = model.batch_loss(
                leaves,
                values,
                channels,
                reference,
                reports_feats,
                channel_weight=cfg["train.channel_weight"],
                n_channel_samples=2,
                use_channel_loss=True,
                rng=chan_rng,
            )
            return loss

        report = ad.finite_difference_check(
            loss_fn,
            model.store,
            step=step,
            tol=tol,
            rng=rng,
            max_components=components_per_param,
            name=f"full-objective round {r}",
        )
        out.append(report)
    return out


# ---------------------------------------------------------------------------
# writers

def write_records_csv(records: list[MetricRecord], path, cfg: RunConfig) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "method", "metric", "k", "value", "std", "seed", "config_hash"])
        for r in records:
            writer.writerow(
                [
                    r.task,
                    r.method,
                    r.metric,
                    "" if r.k is None else r.k,
                    repr(r.value),
                    "" if r.std is None else repr(r.std),
                    r.seed,
                    cfg.content_hash(),
                ]
            )


def write_records_json(records: list[MetricRecord], path, cfg: RunConfig) -> None:
    doc = {"config_hash": cfg.content_hash(), "records": [asdict(r) for r in records]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def write_cosine_matrix(names: list[str], matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel", *names])
        for name, row in zip(names, matrix):
            writer.writerow([name, *[repr(float(v)) for v in row]])


def write_prototypes(prototypes: dict, path, cfg: RunConfig, seed: int, ensemble_size: int) -> None:
    doc = {
        "config_hash": cfg.content_hash(),
        "seed": seed,
        "ensemble_size": ensemble_size,
        "prototypes": {
            method: {
                task: {label: vec.tolist() for label, vec in by_label.items()}
                for task, by_label in by_task.items()
            }
            for method, by_task in prototypes.items()
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
