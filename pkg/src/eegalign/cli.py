"""Command-line harness.

Subcommands: gen-data, train, eval, retrieve, ablate, diagnose, gradcheck.
Every command is deterministic given (config, seed); exit codes are
0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .datagen import TASKS, CorpusError
from .model import AlignmentModel
from .training import NumericalError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

CONFIG_ENV_VAR = "EEGALIGN_CONFIG"


def _load_cfg(args) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    return load_config(path)


def _load_model(args, cfg: RunConfig) -> AlignmentModel:
    if not args.checkpoint:
        raise ConfigError("this command needs --checkpoint PATH")
    model, meta = AlignmentModel.load(args.checkpoint)
    if model.config.embed_dim != cfg["model.embed_dim"]:
        raise ConfigError(
            f"checkpoint embedding dim {model.config.embed_dim} does not match "
            f"config model.embed_dim {cfg['model.embed_dim']}"
        )
    return model


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out_dir = args.out or cfg["paths.data"]
    info = pipeline.gen_data(cfg, args.seed, out_dir, force=args.force)
    print(f"corpus written to {out_dir} (seed {args.seed}, config {cfg.content_hash()})")
    for split, n in info["sizes"].items():
        print(f"  {split}: {n} samples")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    corpus = pipeline.load_corpus_dir(cfg["paths.data"])
    result = pipeline.run_training(cfg, corpus, args.seed)
    out_dir = args.out or "run"
    paths = pipeline.save_run(result, cfg, args.seed, out_dir)
    print(f"best epoch {result.best_epoch} (mean validation balanced accuracy {result.best_score:.4f})")
    for k, v in paths.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    corpus = pipeline.load_corpus_dir(cfg["paths.data"])
    model = _load_model(args, cfg)
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    res = pipeline.evaluate_model(model, cfg, corpus, args.seed)
    pipeline.write_records_csv(res["records"], out / "metrics.csv", cfg)
    pipeline.write_records_json(res["records"], out / "metrics.json", cfg)
    pipeline.write_prototypes(
        res["prototypes"], out / "prototypes.json", cfg, args.seed, cfg["prompts.ensemble_size"]
    )
    with open(out / "prompt_similarity.csv", "w") as f:
        f.write("task,label,method,mean,std,count\n")
        for r in res["similarity_rows"]:
            f.write(f"{r['task']},{r['label']},{r['method']},{r['mean']!r},{r['std']!r},{r['count']}\n")
    for task in TASKS:
        e = res["text_scores"]["ensemble"][task]
        s = res["text_scores"]["single"][task]
        print(f"{task}: text-based balanced accuracy ensemble {e:.4f} single {s:.4f}")
    hb = res["heterogeneity"]
    print(
        f"probe mean balanced accuracy: full {hb['full_mean']:.4f}, "
        f"shifted {hb['shifted_mean']:.4f} (retention {hb['retention']:.3f})"
    )
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = _load_cfg(args)
    corpus = pipeline.load_corpus_dir(cfg["paths.data"])
    model = _load_model(args, cfg)
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    res = pipeline.evaluate_retrieval(model, cfg, corpus, args.seed)
    pipeline.write_records_csv(res["records"], out / "retrieval.csv", cfg)
    pipeline.write_records_json(res["records"], out / "retrieval.json", cfg)
    print(f"retrieval index size {res['index_size']}")
    for task, stats in res["by_task"].items():
        ks = " ".join(f"P@{k}={p:.4f}" for k, p in stats["precision"].items())
        print(f"{task}: {ks} (base rate {stats['base_rate']:.4f})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    corpus = pipeline.load_corpus_dir(cfg["paths.data"])
    seeds = [args.seed + i for i in range(cfg["eval.seeds"])]
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    res = pipeline.ablation_matrix(cfg, corpus, seeds)
    pipeline.write_records_csv(res["records"], out / "ablation.csv", cfg)
    with open(out / "ablation_detail.json", "w") as f:
        json.dump({"seeds": seeds, "detail": res["detail"], "config_hash": cfg.content_hash()}, f, indent=2, sort_keys=True)
    for r in res["records"]:
        print(f"{r.method} {r.task}: shifted-probe balanced accuracy {r.value:.4f} +/- {r.std:.4f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _load_cfg(args)
    corpus = pipeline.load_corpus_dir(cfg["paths.data"])
    model = _load_model(args, cfg)
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    res = pipeline.diagnose_model(model, cfg, corpus, args.seed)
    sep = res["separation"]
    pipeline.write_cosine_matrix(sep["names"], sep["matrix"], out / "channel_cosine_matrix.csv")
    with open(out / "channel_embeddings.csv", "w") as f:
        dim = next(iter(res["by_channel"].values())).shape[1]
        f.write("channel,sample," + ",".join(f"d{i}" for i in range(dim)) + "\n")
        for name in sep["names"]:
            for i, row in enumerate(res["by_channel"][name]):
                f.write(f"{name},{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    with open(out / "separation.json", "w") as f:
        json.dump(
            {
                "within": sep["within"],
                "between": sep["between"],
                "gap": sep["gap"],
                "excluded": sep["excluded"],
                "config_hash": cfg.content_hash(),
                "seed": args.seed,
            },
            f,
            indent=2,
            sort_keys=True,
        )
    print(f"within-channel mean cosine {sep['within']:.4f}, between {sep['between']:.4f}, gap {sep['gap']:.4f}")
    print(f"diagnostics written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    reports = pipeline.gradient_check_full(cfg, args.seed)
    worst = max(r.max_rel_err for r in reports)
    for r in reports:
        print(f"{r.name}: max rel err {r.max_rel_err:.3e} {'pass' if r.passed else 'FAIL'}")
    print(f"worst over {len(reports)} rounds: {worst:.3e}")
    if not all(r.passed for r in reports):
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegalign",
        description="EEG-text contrastive alignment on a synthetic corpus: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "gen-data": (cmd_gen_data, "generate the synthetic corpus"),
        "train": (cmd_train, "train the alignment model"),
        "eval": (cmd_eval, "text-based classification, prompt quality, linear probes"),
        "retrieve": (cmd_retrieve, "EEG-to-report retrieval precision"),
        "ablate": (cmd_ablate, "component ablation grid on the channel-shift benchmark"),
        "diagnose": (cmd_diagnose, "channel embedding dumps and separation diagnostics"),
        "gradcheck": (cmd_gradcheck, "finite-difference check of the full objective"),
    }
    for name, (fn, help_text) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help=f"config file (default: ${CONFIG_ENV_VAR})")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--checkpoint", default=None, help="checkpoint file")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, FileNotFoundError, FileExistsError, KeyError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
