"""Command-line front end.

Subcommands: cache-teacher, distill, evaluate, mapreduce, gate-trace.
Global flags: --config PATH, --seed INT, --out DIR, --trace.

Configs are a single versioned JSON document. Every constant has a default,
so naming a preset ("A2", "ewad_cpdp", ...) is a complete experiment; any
explicitly set field overrides the preset. All validation happens before the
first output file is created, and every output is deterministic given
(config, seed): rerunning a subcommand rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .evalmetrics import retention
from .longdoc import ChunkConfig, summarize_long
from .losses import (
    AdaptiveTauConfig,
    LossWeights,
    TokenBatch,
    cpdp_loss,
    ewad_loss,
)
from .reliability import ReliabilityConfig
from .teachercache import MixingConfig, read_cache, write_cache
from .toymodel import (
    ROUTE_DIRECT,
    forward,
    generate,
    load_checkpoint,
    route,
    save_checkpoint,
)
from .training import (
    CorpusConfig,
    SupervisionBundle,
    TrainConfig,
    _compute_cpdp_anchor,
    _prepare_example,
    build_pseudo_records,
    build_pseudo_variant_topk,
    build_topk_records,
    evaluate_rouge,
    index_pseudo,
    index_topk,
    synthetic_corpus,
    synthetic_document,
    train,
)

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "preset": None,
    "seed": 0,
    "corpus": {
        "n_train": 200,
        "n_test": 50,
        "n_val": 0,
        "vocab_size": 64,
        "min_sentences": 2,
        "max_sentences": 3,
        "min_sentence_len": 4,
        "max_sentence_len": 7,
        "stride": 2,
        "task": "compress",
    },
    "student": {"hidden_dim": 16},
    "teacher1": {"hidden_dim": 24, "checkpoint": "teacher1.json",
                 "cache": "teacher1_topk.jsonl"},
    "teacher2": {"hidden_dim": 20, "checkpoint": None, "cache": "teacher2_topk.jsonl"},
    "pseudo_teachers": [],
    "pseudo_cache": "pseudo_labels.jsonl",
    "cache_k": 8,
    "beam_width": 4,
    "training": {
        "loss_mode": "CE",
        "learning_rate": 0.2,
        "epochs": 20,
        "batch_size": 32,
        "fixed_tau": 0.8,
        "alpha_kd": 0.01,
        "alpha_inter": 0.0,
        "mu": 0.05,
        "cpdp_clamp": 100.0,
        "p_pseudo": 0.0,
        "gate_steepness": 5.0,
        "gate_threshold": 0.5,
        "weight_temperature": 1.0,
        "tau_min": 0.5,
        "tau_max": 2.0,
        "anchor_tokens": 512,
        "lambda_override": None,
        "equal_teacher_weights": False,
        "context_limit": 64,
        "gen_max_len": 16,
    },
    "mapreduce": {
        "chunk_capacity": 60,
        "overlap_sentences": 3,
        "jaccard_threshold": 0.75,
        "map_checkpoint": None,
        "reduce_checkpoint": None,
    },
    "outputs": {
        "checkpoint": "student.json",
        "metrics": "metrics.jsonl",
        "report": "report.json",
        "summary": "summary.json",
        "gate_trace": "gate_trace.jsonl",
        "mapreduce_trace": "mapreduce_trace.jsonl",
    },
}

# Experiment arms. Staged presets follow the five-stage ablation; the
# dual-teacher arms pin the gate and/or the teacher weights.
PRESETS = {
    "A1": {"loss_mode": "CE"},
    "A2": {"loss_mode": "A2", "fixed_tau": 0.8, "alpha_kd": 0.01},
    "A3": {"loss_mode": "A3", "fixed_tau": 0.8, "alpha_kd": 0.01, "p_pseudo": 0.3},
    "A4": {"loss_mode": "A4", "alpha_kd": 0.01, "p_pseudo": 0.3},
    "A5": {"loss_mode": "A5", "alpha_kd": 0.01, "alpha_inter": 0.1, "p_pseudo": 0.3},
    "baseline": {"loss_mode": "CE"},
    "fixed_weights": {
        "loss_mode": "EWAD", "fixed_tau": 1.0,
        "lambda_override": 1.0, "equal_teacher_weights": True,
    },
    "confidence_only": {"loss_mode": "EWAD", "fixed_tau": 1.0, "lambda_override": 1.0},
    "agreement_only": {"loss_mode": "EWAD", "fixed_tau": 1.0, "equal_teacher_weights": True},
    "ewad_full": {"loss_mode": "EWAD", "fixed_tau": 1.0},
    "ewad_cpdp": {"loss_mode": "EWAD_CPDP", "fixed_tau": 1.0},
}


class CliError(RuntimeError):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None, seed_override: int | None) -> dict:
    user: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                user = json.load(f)
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from exc
        if user.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise CliError(f"unsupported config version {user.get('version')!r}")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    preset = user.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise CliError(f"unknown preset {preset!r} (known: {', '.join(sorted(PRESETS))})")
        cfg["training"] = _deep_merge(cfg["training"], PRESETS[preset])
    cfg = _deep_merge(cfg, user)
    if seed_override is not None:
        cfg["seed"] = seed_override
    if cfg["seed"] < 0:
        raise CliError("seed must be non-negative")
    return cfg


def derive_seed(root: int, stream: int) -> int:
    """Deterministic child seed for one named consumer of the root seed."""
    return int(np.random.SeedSequence([root, stream]).generate_state(1)[0])


def _corpus_cfg(cfg: dict, split: str) -> CorpusConfig:
    c = cfg["corpus"]
    n = {"train": c["n_train"], "test": c["n_test"], "val": c["n_val"]}[split]
    stream = {"train": 0, "test": 1, "val": 2}[split]
    return CorpusConfig(
        n_examples=n,
        vocab_size=c["vocab_size"],
        min_sentences=c["min_sentences"],
        max_sentences=c["max_sentences"],
        min_sentence_len=c["min_sentence_len"],
        max_sentence_len=c["max_sentence_len"],
        stride=c["stride"],
        seed=derive_seed(cfg["seed"], stream),
        task=c["task"],
        id_prefix={"train": "tr", "test": "te", "val": "va"}[split],
    )


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        loss_mode=t["loss_mode"],
        weights=LossWeights(
            alpha_kd=t["alpha_kd"], alpha_inter=t["alpha_inter"],
            mu=t["mu"], cpdp_clamp=t["cpdp_clamp"],
        ),
        reliability=ReliabilityConfig(
            gate_steepness=t["gate_steepness"],
            gate_threshold=t["gate_threshold"],
            weight_temperature=t["weight_temperature"],
        ),
        adaptive_tau_cfg=AdaptiveTauConfig(tau_min=t["tau_min"], tau_max=t["tau_max"]),
        mixing=MixingConfig(p_pseudo=t["p_pseudo"], rng_seed=derive_seed(cfg["seed"], 3)),
        learning_rate=t["learning_rate"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        seed=cfg["seed"],
        context_limit=t["context_limit"],
        hidden_dim=cfg["student"]["hidden_dim"],
        fixed_tau=t["fixed_tau"],
        anchor_tokens=t["anchor_tokens"],
        lambda_override=t["lambda_override"],
        equal_teacher_weights=t["equal_teacher_weights"],
        gen_max_len=t["gen_max_len"],
    )


def _resolve(path: str | None, out_dir: str) -> str | None:
    if path is None:
        return None
    return path if os.path.isabs(path) else os.path.join(out_dir, path)


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise CliError(f"{what} is not configured")
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _write_jsonl(path: str, header: dict, rows: list[dict]) -> None:
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(row, sort_keys=True) for row in rows)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_bundle(cfg: dict, out_dir: str, mode: str) -> SupervisionBundle:
    """Read whatever caches the loss mode consumes, validating first."""
    bundle = SupervisionBundle()
    if mode in ("A2", "A3", "A4", "A5", "EWAD", "EWAD_CPDP"):
        path = _require_file(_resolve(cfg["teacher1"]["cache"], out_dir), "teacher1 cache")
        bundle.topk1 = index_topk(read_cache(path))
    if mode in ("EWAD", "EWAD_CPDP"):
        path = _require_file(_resolve(cfg["teacher2"]["cache"], out_dir), "teacher2 cache")
        bundle.topk2 = index_topk(read_cache(path))
    if mode in ("A3", "A4", "A5") and cfg["training"]["p_pseudo"] > 0:
        path = _require_file(_resolve(cfg["pseudo_cache"], out_dir), "pseudo-label cache")
        bundle.pseudo = index_pseudo(read_cache(path))
    if mode == "A5":
        path = _require_file(
            _resolve(cfg["teacher1"]["checkpoint"], out_dir), "teacher1 checkpoint"
        )
        bundle.teacher_params, _ = load_checkpoint(path)
    return bundle


# ---------------------------------------------------------------------------
# Subcommands


def cmd_cache_teacher(cfg: dict, out_dir: str, trace: bool) -> int:
    t1_path = _require_file(
        _resolve(cfg["teacher1"]["checkpoint"], out_dir), "teacher1 checkpoint"
    )
    t2_ckpt = _resolve(cfg["teacher2"]["checkpoint"], out_dir)
    pseudo_teachers = [
        (p["id"], _require_file(_resolve(p["checkpoint"], out_dir), f"pseudo teacher {p['id']}"))
        for p in cfg["pseudo_teachers"]
    ]

    corpus = synthetic_corpus(_corpus_cfg(cfg, "train"))
    k = cfg["cache_k"]
    t1_params, _ = load_checkpoint(t1_path)
    t2_params = None
    if t2_ckpt is not None:
        t2_params, _ = load_checkpoint(_require_file(t2_ckpt, "teacher2 checkpoint"))

    # build every record first so a failure cannot leave partial cache files
    pseudo_records = []
    for tid, path in pseudo_teachers:
        params, _ = load_checkpoint(path)
        pseudo_records.extend(
            build_pseudo_records(
                params, tid, corpus,
                beam_width=cfg["beam_width"], max_len=cfg["training"]["gen_max_len"],
            )
        )
    pseudo_idx = index_pseudo(pseudo_records) if pseudo_records else None

    def topk_for(params):
        records = build_topk_records(params, corpus, k)
        if pseudo_idx:
            records.extend(build_pseudo_variant_topk(params, corpus, pseudo_idx, k))
        return records

    records1 = topk_for(t1_params)
    records2 = topk_for(t2_params) if t2_params is not None else None

    if pseudo_records:
        n = write_cache(
            pseudo_records, _resolve(cfg["pseudo_cache"], out_dir),
            vocab_size=corpus.vocab_size,
        )
        print(f"wrote {n} pseudo-label records to {cfg['pseudo_cache']}")
    n = write_cache(records1, _resolve(cfg["teacher1"]["cache"], out_dir), k=k)
    print(f"wrote {n} top-k records to {cfg['teacher1']['cache']}")
    if records2 is not None:
        n = write_cache(records2, _resolve(cfg["teacher2"]["cache"], out_dir), k=k)
        print(f"wrote {n} top-k records to {cfg['teacher2']['cache']}")
    return 0


def cmd_distill(cfg: dict, out_dir: str, trace: bool) -> int:
    tc = _train_config(cfg)
    bundle = _load_bundle(cfg, out_dir, tc.loss_mode)
    corpus = synthetic_corpus(_corpus_cfg(cfg, "train"))
    val_corpus = None
    if cfg["corpus"]["n_val"] > 0:
        val_corpus = synthetic_corpus(_corpus_cfg(cfg, "val"))

    result = train(tc, corpus, bundle, val_corpus=val_corpus)

    ckpt_path = _resolve(cfg["outputs"]["checkpoint"], out_dir)
    save_checkpoint(
        ckpt_path, result.params,
        hbar_batch=result.hbar_batch,
        projection=result.projection,
        meta={"loss_mode": tc.loss_mode, "seed": cfg["seed"],
              "preset": cfg.get("preset"),
              "delta_star": None if result.anchor is None else result.anchor.delta_star},
    )
    metrics_path = _resolve(cfg["outputs"]["metrics"], out_dir)
    _write_jsonl(
        metrics_path,
        {"version": 1, "kind": "metrics", "loss_mode": tc.loss_mode, "seed": cfg["seed"]},
        result.metrics,
    )
    print(f"trained {tc.loss_mode} for {tc.epochs} epochs; "
          f"checkpoint {cfg['outputs']['checkpoint']}, metrics {cfg['outputs']['metrics']}")
    return 0


def cmd_evaluate(cfg: dict, out_dir: str, trace: bool,
                 checkpoint: str | None, teacher_checkpoint: str | None) -> int:
    ckpt = _require_file(
        _resolve(checkpoint or cfg["outputs"]["checkpoint"], out_dir), "checkpoint"
    )
    params, _ = load_checkpoint(ckpt)
    corpus = synthetic_corpus(_corpus_cfg(cfg, "test"))
    if not corpus.examples:
        raise CliError("test split is empty; configure corpus.n_test > 0")
    scores = evaluate_rouge(params, corpus, max_len=cfg["training"]["gen_max_len"])
    report = {
        "version": 1,
        "kind": "evaluation",
        "config": {"preset": cfg.get("preset"), "seed": cfg["seed"],
                   "n_test": cfg["corpus"]["n_test"]},
        "rouge1": scores.rouge1,
        "rouge2": scores.rouge2,
        "rougeL": scores.rougeL,
    }
    if teacher_checkpoint is not None:
        t_params, _ = load_checkpoint(_require_file(
            _resolve(teacher_checkpoint, out_dir), "teacher checkpoint"))
        t_scores = evaluate_rouge(t_params, corpus, max_len=cfg["training"]["gen_max_len"])
        rep = retention(scores, t_scores)
        report["teacher_rougeL"] = rep.teacher
        report["retention_pct"] = rep.retention_pct
    _write_json(_resolve(cfg["outputs"]["report"], out_dir), report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_mapreduce(cfg: dict, out_dir: str, trace: bool, document: str | None) -> int:
    mr = cfg["mapreduce"]
    map_ckpt = _require_file(
        _resolve(mr["map_checkpoint"] or cfg["outputs"]["checkpoint"], out_dir),
        "map checkpoint",
    )
    reduce_ckpt = _resolve(mr["reduce_checkpoint"], out_dir) or map_ckpt
    map_params, _ = load_checkpoint(map_ckpt)
    reduce_params, _ = load_checkpoint(_require_file(reduce_ckpt, "reduce checkpoint"))

    if document is not None:
        with open(_require_file(document, "document file"), "r", encoding="utf-8") as f:
            obj = json.load(f)
        tokens = obj["tokens"] if isinstance(obj, dict) else obj
    else:
        tokens = synthetic_document(
            3000, vocab_size=cfg["corpus"]["vocab_size"], seed=cfg["seed"]
        )
    tokens = [int(t) for t in tokens]

    limit = cfg["training"]["context_limit"]
    ccfg = ChunkConfig(
        chunk_capacity=mr["chunk_capacity"],
        overlap_sentences=mr["overlap_sentences"],
        jaccard_threshold=mr["jaccard_threshold"],
        context_limit=limit,
    )
    gen_len = cfg["training"]["gen_max_len"]
    decided = route(tokens, limit)
    trace_rows: list[dict] = []
    if decided == ROUTE_DIRECT:
        summary = generate(map_params, tokens, mode="greedy", max_len=gen_len)
    else:
        summary = summarize_long(
            tokens,
            lambda c: generate(map_params, c, mode="greedy", max_len=gen_len),
            lambda c: generate(reduce_params, c, mode="greedy", max_len=gen_len),
            ccfg,
            trace=trace_rows if trace else None,
        )
    _write_json(
        _resolve(cfg["outputs"]["summary"], out_dir),
        {"version": 1, "kind": "summary", "route": decided,
         "n_input_tokens": len(tokens), "summary": [int(t) for t in summary]},
    )
    if trace:
        _write_jsonl(
            _resolve(cfg["outputs"]["mapreduce_trace"], out_dir),
            {"version": 1, "kind": "mapreduce_trace", "route": decided},
            trace_rows,
        )
    print(f"route={decided} summary_tokens={len(summary)}")
    return 0


def cmd_gate_trace(cfg: dict, out_dir: str, trace: bool, samples: list[str]) -> int:
    if not samples:
        raise CliError("gate-trace requires at least one sample id")
    bundle = _load_bundle(cfg, out_dir, "EWAD_CPDP")
    ckpt = _require_file(_resolve(cfg["outputs"]["checkpoint"], out_dir), "checkpoint")
    params, _ = load_checkpoint(ckpt)
    corpus = synthetic_corpus(_corpus_cfg(cfg, "train"))
    by_id = {ex.example_id: (i, ex) for i, ex in enumerate(corpus.examples)}
    for sid in samples:
        if sid not in by_id:
            raise CliError(f"unknown sample id {sid!r}")

    tc = _train_config(cfg)
    tc.loss_mode = "EWAD_CPDP"  # tracing always needs both teachers
    prepared = {
        sid: (_prepare_example(by_id[sid][0], by_id[sid][1], tc, bundle), by_id[sid][1])
        for sid in samples
    }
    anchor = _compute_cpdp_anchor([p for p, _ in prepared.values()], tc.anchor_tokens)

    rows = []
    for sid in samples:
        prep, ex = prepared[sid]
        logits, _ = forward(params, ex.document, prep.target)
        tb = TokenBatch(
            gold_ids=prep.target,
            mask=[True] * len(prep.target),
            student_logits=logits,
            teacher1_logits=prep.t1_logits,
            teacher2_logits=prep.t2_logits,
        )
        _, _, etr = ewad_loss(tb, tc.reliability, tc.fixed_tau,
                              lambda_override=tc.lambda_override,
                              equal_weights=tc.equal_teacher_weights)
        _, _, ctr = cpdp_loss(tb, anchor, tc.weights)
        for i, pos in enumerate(etr.positions):
            rows.append({
                "id": sid,
                "position": int(pos),
                "c1": float(etr.c1[i]),
                "c2": float(etr.c2[i]),
                "w1": float(etr.w1[i]),
                "w2": float(etr.w2[i]),
                "agreement": float(etr.agreement[i]),
                "lambda": float(etr.gate[i]),
                "kd_term": float(etr.kd_term[i]),
                "ce_term": float(etr.ce_term[i]),
                "cpdp_term": float(ctr.value[i]),
            })
    _write_jsonl(
        _resolve(cfg["outputs"]["gate_trace"], out_dir),
        {"version": 1, "kind": "gate_trace", "delta_star": anchor.delta_star},
        rows,
    )
    print(f"wrote {len(rows)} gate-trace records for {len(samples)} samples")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relkd",
        description="Reliability-aware multi-teacher distillation laboratory",
    )
    parser.add_argument("--config", default=None, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--trace", action="store_true", help="dump intermediate artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("cache-teacher", help="score teachers offline into JSONL caches")
    sub.add_parser("distill", help="train a student under the configured arm")

    p_eval = sub.add_parser("evaluate", help="greedy-decode a test split and score it")
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--teacher-checkpoint", default=None)

    p_mr = sub.add_parser("mapreduce", help="length-routed long-document summarization")
    p_mr.add_argument("--document", default=None, help="JSON token file (default: synthetic)")

    p_gt = sub.add_parser("gate-trace", help="per-token reliability records for samples")
    p_gt.add_argument("--samples", required=True, help="comma-separated sample ids")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "cache-teacher":
            return cmd_cache_teacher(cfg, args.out, args.trace)
        if args.command == "distill":
            return cmd_distill(cfg, args.out, args.trace)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, args.trace,
                                args.checkpoint, args.teacher_checkpoint)
        if args.command == "mapreduce":
            return cmd_mapreduce(cfg, args.out, args.trace, args.document)
        if args.command == "gate-trace":
            return cmd_gate_trace(cfg, args.out, args.trace,
                                  [s for s in args.samples.split(",") if s])
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
