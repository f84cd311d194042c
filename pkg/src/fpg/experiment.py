"""End-to-end experiment pipeline behind the command-line interface.

Every command is a plain function over a resolved configuration dict, so
tests and notebooks can drive the same pipeline without a subprocess.  All
randomness flows from the single ``seed`` key, split deterministically per
component, and each output directory receives a copy of the resolved
configuration.
"""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

from . import data as D
from . import metrics as M
from . import training as TR
from .decoding import beam_search, write_predictions
from .model import FpgModel, ModelConfig
from .text import Vocab, apply_casing, build_vocab, casing_map, decode, encode

log = logging.getLogger("fpg")


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "paths": {
        "corpus": "data/corpus.jsonl",
        "clicks": "data/clicks.jsonl",
        "references": "data/references.jsonl",
        "out_dir": "out",
    },
    "synth": {"n_users": 12, "n_news": 80, "n_topics": 3},
    "model": {
        "d_e": 64,
        "n_heads": 4,
        "n_blocks": 2,
        "T": 16,
        "M": 64,
        "N": 8,
        "history_encoder": "gru",
        "ffn_mult": 4,
    },
    "vocab": {"max_size": 2000, "min_freq": 1},
    "data": {
        "limit_l": 5,
        "history_cap": 8,
        "fact_threshold": 0.8,
        "top_fraction": 0.6,
        "k_neg": 3,
    },
    # toy-scale learning rates; full-scale values (3e-5/1e-4/3e-5/1e-7,
    # epochs 5/5/9/1) can be set here directly
    "stages": [
        {"stage": 1, "epochs": 5, "lr": 3e-3, "batch_size": 8, "weight_decay": 0.01, "grad_clip": 1.0},
        {"stage": 2, "epochs": 5, "lr": 1e-3, "batch_size": 8, "weight_decay": 0.01, "grad_clip": 1.0},
        {"stage": 3, "epochs": 9, "lr": 3e-4, "batch_size": 8, "weight_decay": 0.01, "grad_clip": 1.0},
        {"stage": 4, "epochs": 1, "lr": 1e-5, "batch_size": 8, "weight_decay": 0.01, "grad_clip": 1.0},
    ],
    "decode": {"beam_width": 3, "length_penalty": 1.0, "max_len": None},
    "eval": {"embedder": "tfidf"},
}


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config field: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config field {dotted} must be a mapping")
            out[key] = _merge(base[key], value, dotted)
        elif key == "stages":
            out[key] = [_merge(DEFAULTS["stages"][i], s, f"stages[{i}]") for i, s in enumerate(value)]
        else:
            out[key] = value
    return out


def resolve_config(raw: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, raw or {}, "")
    if cfg["model"]["history_encoder"] not in ("gru", "cnn", "sa"):
        raise ConfigError("unknown config value for model.history_encoder")
    if cfg["eval"]["embedder"] not in ("tfidf", "model"):
        raise ConfigError("unknown config value for eval.embedder")
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def _write_resolved(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} is missing; run `fpg {producer}` first")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(config: dict) -> dict:
    """Write the synthetic benchmark to the configured data paths."""
    paths = {k: Path(v) for k, v in config["paths"].items()}
    synth = config["synth"]
    bench = D.generate_synthetic_benchmark(
        seed=config["seed"],
        n_users=synth["n_users"],
        n_news=synth["n_news"],
        n_topics=synth["n_topics"],
    )
    for p in ("corpus", "clicks", "references"):
        paths[p].parent.mkdir(parents=True, exist_ok=True)
    D.save_corpus(bench.corpus, paths["corpus"])
    D.save_clicks(bench.click_logs, paths["clicks"])
    D.save_references(bench.references, paths["references"])
    manifest = {
        "news": len(bench.corpus),
        "users": len(bench.click_logs),
        "references": len(bench.references),
    }
    data_dir = paths["corpus"].parent
    (data_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write_resolved(config, data_dir)
    log.info("synth: %s", manifest)
    return manifest


def cmd_prep(config: dict) -> dict:
    """Build the pretraining, distant-supervision and contrastive sets."""
    paths = config["paths"]
    out_dir = Path(paths["out_dir"])
    corpus = D.load_corpus(_require(Path(paths["corpus"]), "synth"))
    clicks = D.load_clicks(Path(paths["clicks"]), corpus)
    references = D.load_references(Path(paths["references"]))

    candidate_ids = {nid for log_ in clicks for nid, clicked in log_.impressions if clicked}
    candidate_ids.update(r.news_id for r in references)
    pretrain = D.build_pretrain_set(corpus, candidate_ids)
    train_set = D.build_training_set(
        corpus, clicks, limit_l=config["data"]["limit_l"], history_cap=config["data"]["history_cap"]
    )
    contrastive = D.build_contrastive_set(
        corpus,
        train_set,
        k_neg=config["data"]["k_neg"],
        score_threshold=config["data"]["fact_threshold"],
        top_fraction=config["data"]["top_fraction"],
        seed=config["seed"],
    )
    vocab = build_vocab(
        (a.headline + " " + a.body for a in corpus.values()),
        min_freq=config["vocab"]["min_freq"],
        max_size=config["vocab"]["max_size"],
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    with open(out_dir / "pretrain.jsonl", "w", encoding="utf-8") as fh:
        for body, headline in pretrain:
            fh.write(json.dumps({"body": body, "headline": headline}, sort_keys=True) + "\n")
    with open(out_dir / "train.jsonl", "w", encoding="utf-8") as fh:
        for ex in train_set:
            rec = {
                "user_id": ex.user_id,
                "candidate_news_id": ex.candidate_news_id,
                "history_ids": list(ex.history_ids),
                "target_headline": ex.target_headline,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out_dir / "contrastive.jsonl", "w", encoding="utf-8") as fh:
        for pair in contrastive:
            rec = {
                "user_id": pair.user_id,
                "candidate_news_id": pair.candidate_news_id,
                "history_ids": list(pair.history_ids),
                "positive": pair.positive,
                "negatives": [list(n) for n in pair.negatives],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    manifest = {
        "C": {"news": len(pretrain), "users": 0, "examples": len(pretrain)},
        "D_l": {
            "news": len({e.candidate_news_id for e in train_set}),
            "users": len({e.user_id for e in train_set}),
            "examples": len(train_set),
        },
        "D_star": {
            "news": len({p.candidate_news_id for p in contrastive}),
            "users": len({p.user_id for p in contrastive}),
            "examples": len(contrastive),
        },
        "D_T": {
            "news": len({r.news_id for r in references}),
            "users": len({r.user_id for r in references}),
            "examples": len(references),
        },
        "vocab_size": len(vocab),
        "limit_l": config["data"]["limit_l"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write_resolved(config, out_dir)
    log.info("prep: %s", manifest)
    return manifest


def _load_prep(config: dict):
    paths = config["paths"]
    out_dir = Path(paths["out_dir"])
    _require(out_dir / "vocab.txt", "prep")
    vocab = Vocab.load(out_dir / "vocab.txt")
    corpus = D.load_corpus(Path(paths["corpus"]))
    pretrain = [
        (rec["body"], rec["headline"])
        for _, rec in D._read_jsonl(out_dir / "pretrain.jsonl")
    ]
    train_set = [
        D.TrainExample(
            user_id=rec["user_id"],
            candidate_news_id=rec["candidate_news_id"],
            history_ids=tuple(rec["history_ids"]),
            target_headline=rec["target_headline"],
        )
        for _, rec in D._read_jsonl(out_dir / "train.jsonl")
    ]
    contrastive = [
        D.ContrastivePair(
            user_id=rec["user_id"],
            candidate_news_id=rec["candidate_news_id"],
            history_ids=tuple(rec["history_ids"]),
            positive=rec["positive"],
            negatives=tuple((t, k) for t, k in rec["negatives"]),
        )
        for _, rec in D._read_jsonl(out_dir / "contrastive.jsonl")
    ]
    return vocab, corpus, pretrain, train_set, contrastive


def model_config_from(config: dict, vocab: Vocab, history_encoder: str | None = None) -> ModelConfig:
    fields = dict(config["model"])
    if history_encoder:
        fields["history_encoder"] = history_encoder
    return ModelConfig(vocab_size=len(vocab), **fields)


def build_datasets(config: dict, vocab: Vocab, corpus, pretrain, train_set, contrastive, model_cfg):
    return {
        "C": TR.encode_pretrain(pretrain, vocab, model_cfg),
        "Dl": TR.encode_supervised(corpus, train_set, vocab, model_cfg),
        "Dstar": TR.encode_contrastive(corpus, contrastive, vocab, model_cfg),
    }


def stage_schedule(config: dict) -> list[TR.StageConfig]:
    return [
        TR.StageConfig(
            stage=s["stage"],
            epochs=s["epochs"],
            lr=s["lr"],
            batch_size=s["batch_size"],
            weight_decay=s["weight_decay"],
            grad_clip=s["grad_clip"],
            seed=config["seed"] * 101 + s["stage"],
        )
        for s in config["stages"]
    ]


def cmd_train(
    config: dict,
    no_history: bool = False,
    history_encoder: str | None = None,
    out_subdir: str | None = None,
) -> str:
    """Run the staged schedule; returns the final checkpoint path."""
    vocab, corpus, pretrain, train_set, contrastive = _load_prep(config)
    model_cfg = model_config_from(config, vocab, history_encoder)
    datasets = build_datasets(config, vocab, corpus, pretrain, train_set, contrastive, model_cfg)
    schedule = stage_schedule(config)
    if no_history:
        # theta receives no gradient without the history path; stage 2
        # would be a frozen no-op, so the ablation skips it
        schedule = [s for s in schedule if s.stage != 2]
    out_dir = Path(config["paths"]["out_dir"])
    if out_subdir:
        out_dir = out_dir / out_subdir
    out_dir.mkdir(parents=True, exist_ok=True)
    model = FpgModel(model_cfg, seed=config["seed"])
    with open(out_dir / "training_log.jsonl", "w", encoding="utf-8") as log_fh:
        report = TR.train_full(
            model,
            schedule,
            datasets,
            use_history=not no_history,
            out_dir=out_dir,
            log_fh=log_fh,
        )
    summary = {
        "stages": [
            {"stage": r.stage, "epoch_losses": r.epoch_losses, "wall_ms": r.wall_ms}
            for r in report.stage_reports
        ],
        "margin_pre_stage4": report.margin_pre,
        "margin_post_stage4": report.margin_post,
        "final_checkpoint": report.final_checkpoint,
        "no_history": no_history,
    }
    (out_dir / "train_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_resolved(config, out_dir)
    log.info("train: final checkpoint %s", report.final_checkpoint)
    return report.final_checkpoint


def cmd_generate(
    config: dict,
    checkpoint: str | None = None,
    no_history: bool = False,
    out_subdir: str | None = None,
) -> str:
    """Beam-search a headline for every test reference; returns the
    predictions path."""
    paths = config["paths"]
    out_dir = Path(paths["out_dir"])
    if out_subdir:
        out_dir = out_dir / out_subdir
    if checkpoint is None:
        checkpoint = str(_require(out_dir / "final.ckpt", "train"))
    model = FpgModel.load(checkpoint)
    vocab = Vocab.load(_require(Path(paths["out_dir"]) / "vocab.txt", "prep"))
    corpus = D.load_corpus(Path(paths["corpus"]))
    clicks = {c.user_id: c for c in D.load_clicks(Path(paths["clicks"]), corpus)}
    references = D.load_references(Path(paths["references"]))
    decode_cfg = config["decode"]
    surface = casing_map(a.headline + " " + a.body for a in corpus.values())
    records = []
    for ref in references:
        body = encode(corpus[ref.news_id].body, vocab, model.config.M)
        history_ids = clicks[ref.user_id].clicked_news_ids[-model.config.N :]
        history = [encode(corpus[n].headline, vocab, model.config.T) for n in history_ids]
        seq, score = beam_search(
            model,
            body,
            history=None if no_history else history,
            beam_width=decode_cfg["beam_width"],
            max_len=decode_cfg["max_len"] or model.config.T,
            length_penalty=decode_cfg["length_penalty"],
            use_history=not no_history,
        )
        records.append(
            {
                "user_id": ref.user_id,
                "news_id": ref.news_id,
                "generated_headline": apply_casing(decode(seq, vocab), surface),
                "score": score,
            }
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    predictions = out_dir / "predictions.jsonl"
    write_predictions(predictions, records)
    _write_resolved(config, out_dir)
    log.info("generate: wrote %d predictions to %s", len(records), predictions)
    return str(predictions)


def cmd_evaluate(config: dict, predictions_path: str | None = None, out_subdir: str | None = None) -> M.EvalReport:
    paths = config["paths"]
    out_dir = Path(paths["out_dir"])
    if out_subdir:
        out_dir = out_dir / out_subdir
    if predictions_path is None:
        predictions_path = str(_require(out_dir / "predictions.jsonl", "generate"))
    corpus = D.load_corpus(Path(paths["corpus"]))
    clicks = D.load_clicks(Path(paths["clicks"]), corpus)
    references = {
        (r.user_id, r.news_id): r.reference for r in D.load_references(Path(paths["references"]))
    }
    histories = {
        c.user_id: [corpus[n].headline for n in c.clicked_news_ids] for c in clicks
    }
    predictions = M.load_predictions(predictions_path)
    if config["eval"]["embedder"] == "model":
        model = FpgModel.load(str(_require(out_dir / "final.ckpt", "train")))
        vocab = Vocab.load(Path(paths["out_dir"]) / "vocab.txt")
        embedder = M.EmbeddingTableEmbedder(model.params["tok_emb"].data, vocab)
    else:
        embedder = M.TfidfEmbedder(a.headline for a in corpus.values())
    report = M.evaluate_run(predictions, references, corpus, histories, embedder)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write(out_dir / "report.jsonl")
    (out_dir / "table.txt").write_text(M.format_report_table({"run": report}))
    _write_resolved(config, out_dir)
    log.info("evaluate: %s", report.aggregates())
    return report


ABLATION_VARIANTS = ("gru", "cnn", "sa", "no-history")


def cmd_ablate(config: dict) -> dict[str, M.EvalReport]:
    """Train and evaluate every history-encoder variant plus the
    no-history baseline on the shared prepared data."""
    out_dir = Path(config["paths"]["out_dir"])
    reports: dict[str, M.EvalReport] = {}
    for variant in ABLATION_VARIANTS:
        no_history = variant == "no-history"
        sub = f"ablate_{variant.replace('-', '_')}"
        label = "no-history" if no_history else f"fpg-{variant}"
        checkpoint = cmd_train(
            config,
            no_history=no_history,
            history_encoder=None if no_history else variant,
            out_subdir=sub,
        )
        cmd_generate(config, checkpoint, no_history=no_history, out_subdir=sub)
        reports[label] = cmd_evaluate(config, out_subdir=sub)
    table = M.format_report_table(reports)
    (out_dir / "comparison_table.txt").write_text(table)
    log.info("ablate:\n%s", table)
    return reports
