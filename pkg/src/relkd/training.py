"""Training loop for the toy student: corpus synthesis, supervision bundles,
loss-mode wiring, and plain gradient descent.

Loss modes mirror the staged experiment arms:

  CE          gold cross-entropy only (baseline)
  A2          + fixed-temperature logit distillation from teacher 1
  A3          + stochastic pseudo-label target replacement
  A4          + per-sample adaptive temperature
  A5          + projected hidden-state matching
  EWAD        reliability-gated dual-teacher routing
  EWAD_CPDP   gated routing plus the divergence-gap regularizer

Everything is deterministic given (seed, config, corpus): rng streams are
derived from the seed per consumer, batch order is a seeded permutation, and
gradient reductions run in fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distmath import entropy, log_softmax_t
from .evalmetrics import RougeScores, rouge_l, rouge_n
from .losses import (
    AdaptiveTauConfig,
    CpdpAnchor,
    LossWeights,
    HiddenPair,
    TokenBatch,
    adaptive_tau,
    ce_loss,
    combined_total,
    compute_anchor,
    ewad_loss,
    standard_total,
)
from .reliability import ReliabilityConfig
from .teachercache import (
    MixingConfig,
    PseudoLabelRecord,
    TopKRecord,
    densify,
    sample_target,
)
from .toymodel import (
    BOS_ID,
    BOUNDARY_ID,
    EOS_ID,
    FIRST_CONTENT_ID,
    ToyModelParams,
    backward_batch,
    forward,
    forward_batch,
    generate,
    init_params,
)

LOSS_MODES = ("CE", "A2", "A3", "A4", "A5", "EWAD", "EWAD_CPDP")

# Modes that densify a first-teacher top-k cache into logit supervision.
_NEEDS_T1 = ("A2", "A3", "A4", "A5", "EWAD", "EWAD_CPDP")
_NEEDS_T2 = ("EWAD", "EWAD_CPDP")
_NEEDS_PSEUDO = ("A3", "A4", "A5")
_ADAPTIVE_TAU = ("A4", "A5")

_LOGIT_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class CorpusConfig:
    """Seeded generator settings for the toy summarization corpus.

    The compression task emits documents made of boundary-terminated
    sentences; the gold summary keeps every ``stride``-th salient token
    (ids in the upper half of the vocabulary). The copy task emits short
    boundary-free documents whose summary is the document itself.
    """

    n_examples: int
    vocab_size: int = 64
    min_sentences: int = 2
    max_sentences: int = 3
    min_sentence_len: int = 4
    max_sentence_len: int = 7
    stride: int = 2
    seed: int = 0
    task: str = "compress"
    id_prefix: str = "ex"

    def __post_init__(self) -> None:
        if self.vocab_size < FIRST_CONTENT_ID + 2 or self.vocab_size > 64:
            raise ValueError("vocab_size must lie in [5, 64]")
        if self.task not in ("compress", "copy"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class CorpusExample:
    example_id: str
    document: list[int]
    summary: list[int]


@dataclass
class Corpus:
    examples: list[CorpusExample]
    vocab_size: int

    def __len__(self) -> int:
        return len(self.examples)


def salient_threshold(vocab_size: int) -> int:
    return vocab_size // 2


def synthetic_corpus(cfg: CorpusConfig) -> Corpus:
    """Deterministic toy corpus; identical config gives identical examples."""
    rng = np.random.default_rng([cfg.seed, 11])
    thresh = salient_threshold(cfg.vocab_size)
    examples = []
    for i in range(cfg.n_examples):
        while True:
            if cfg.task == "copy":
                ln = int(rng.integers(cfg.min_sentence_len, cfg.max_sentence_len + 1))
                doc = rng.integers(FIRST_CONTENT_ID, cfg.vocab_size, ln).tolist()
                summary = list(doc)
            else:
                n_sent = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
                doc = []
                for _ in range(n_sent):
                    ln = int(rng.integers(cfg.min_sentence_len, cfg.max_sentence_len + 1))
                    doc.extend(rng.integers(FIRST_CONTENT_ID, cfg.vocab_size, ln).tolist())
                    doc.append(BOUNDARY_ID)
                salient = [t for t in doc if t >= thresh]
                summary = salient[:: cfg.stride]
            if summary:
                break
        examples.append(
            CorpusExample(f"{cfg.id_prefix}{i:05d}", [int(t) for t in doc], [int(t) for t in summary])
        )
    return Corpus(examples=examples, vocab_size=cfg.vocab_size)


def synthetic_document(
    n_tokens: int,
    vocab_size: int = 64,
    seed: int = 0,
    min_sentence_len: int = 4,
    max_sentence_len: int = 8,
    distinct_sentences: int | None = None,
) -> list[int]:
    """A long boundary-delimited token stream for the MapReduce pipeline.

    With ``distinct_sentences`` set, sentences repeat from that small pool so
    deduplication has real work to do.
    """
    rng = np.random.default_rng([seed, 13])
    pool = None
    if distinct_sentences is not None:
        pool = []
        for _ in range(distinct_sentences):
            ln = int(rng.integers(min_sentence_len, max_sentence_len + 1))
            s = rng.integers(FIRST_CONTENT_ID, vocab_size, ln).tolist() + [BOUNDARY_ID]
            pool.append([int(t) for t in s])
    doc: list[int] = []
    while len(doc) < n_tokens:
        if pool is not None:
            s = pool[int(rng.integers(len(pool)))]
        else:
            ln = int(rng.integers(min_sentence_len, max_sentence_len + 1))
            s = rng.integers(FIRST_CONTENT_ID, vocab_size, ln).tolist() + [BOUNDARY_ID]
        doc.extend(int(t) for t in s)
    return doc[:n_tokens]


# ---------------------------------------------------------------------------
# Supervision bundles and cache builders


@dataclass
class SupervisionBundle:
    """Everything the trainer may consume besides the gold corpus."""

    topk1: dict[str, TopKRecord] | None = None
    topk2: dict[str, TopKRecord] | None = None
    pseudo: dict[str, list[PseudoLabelRecord]] | None = None
    teacher_params: ToyModelParams | None = None


def index_topk(records: list[TopKRecord]) -> dict[str, TopKRecord]:
    return {r.example_id: r for r in records}


def index_pseudo(records: list[PseudoLabelRecord]) -> dict[str, list[PseudoLabelRecord]]:
    out: dict[str, list[PseudoLabelRecord]] = {}
    for r in records:
        out.setdefault(r.example_id, []).append(r)
    return out


def pseudo_variant_id(example_id: str, teacher_id: str) -> str:
    return f"{example_id}::pseudo:{teacher_id}"


def _target_with_eos(summary: list[int]) -> list[int]:
    return list(summary) + [EOS_ID]


def topk_from_logits(logits: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
    """Per-position top-k (token, logprob) pairs, sorted by descending
    log-probability with ties broken toward lower token ids."""
    logp = log_softmax_t(np.asarray(logits, dtype=float), 1.0)
    out = []
    for row in logp:
        order = np.lexsort((np.arange(row.size), -row))[:k]
        out.append([(int(t), float(row[t])) for t in order])
    return out


def build_topk_records(
    params: ToyModelParams, corpus: Corpus, k: int
) -> list[TopKRecord]:
    """Teacher-force the model on every gold target and cache top-k logprobs."""
    records = []
    for ex in corpus.examples:
        logits, _ = forward(params, ex.document, _target_with_eos(ex.summary))
        records.append(
            TopKRecord(ex.example_id, topk_from_logits(logits, k), corpus.vocab_size)
        )
    return records


def build_pseudo_records(
    params: ToyModelParams,
    teacher_id: str,
    corpus: Corpus,
    beam_width: int = 4,
    max_len: int = 16,
) -> list[PseudoLabelRecord]:
    """Generate a beam-search pseudo-summary per example.

    An empty generation (immediate end-of-sequence) is replaced by the
    strongest non-terminal first token so the record stays non-empty.
    """
    records = []
    for ex in corpus.examples:
        toks = generate(params, ex.document, mode="beam", beam_width=beam_width, max_len=max_len)
        if not toks:
            logits, _ = forward(params, ex.document, [EOS_ID])
            row = logits[0].copy()
            row[EOS_ID] = -np.inf
            toks = [int(np.argmax(row))]
        records.append(
            PseudoLabelRecord(
                example_id=ex.example_id,
                teacher_id=teacher_id,
                tokens=toks,
                text=" ".join(str(t) for t in toks),
                beam_width=beam_width,
            )
        )
    return records


def build_pseudo_variant_topk(
    params: ToyModelParams,
    corpus: Corpus,
    pseudo: dict[str, list[PseudoLabelRecord]],
    k: int,
) -> list[TopKRecord]:
    """Teacher-force the model on each pseudo-label sequence so logit
    distillation can target whichever sequence the mixer selects."""
    records = []
    for ex in corpus.examples:
        for rec in pseudo.get(ex.example_id, []):
            logits, _ = forward(params, ex.document, _target_with_eos(rec.tokens))
            records.append(
                TopKRecord(
                    pseudo_variant_id(ex.example_id, rec.teacher_id),
                    topk_from_logits(logits, k),
                    corpus.vocab_size,
                )
            )
    return records


def cached_teacher_logits(record: TopKRecord, length: int) -> np.ndarray:
    """Densify a cached record into (length, V) logit rows (floored log)."""
    if len(record.positions) != length:
        raise ValueError(
            f"cache record {record.example_id} covers {len(record.positions)} positions, "
            f"target has {length}"
        )
    arr = np.empty((length, record.vocab_size))
    for t in range(length):
        arr[t] = np.log(np.maximum(densify(record, t), _LOGIT_FLOOR))
    return arr


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    loss_mode: str = "CE"
    weights: LossWeights = field(default_factory=LossWeights)
    reliability: ReliabilityConfig = field(default_factory=ReliabilityConfig)
    adaptive_tau_cfg: AdaptiveTauConfig = field(default_factory=AdaptiveTauConfig)
    mixing: MixingConfig = field(default_factory=MixingConfig)
    learning_rate: float = 0.2
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    context_limit: int = 64
    hidden_dim: int = 16
    fixed_tau: float = 0.8
    anchor_tokens: int = 512
    lambda_override: float | None = None
    equal_teacher_weights: bool = False
    gen_max_len: int = 16

    def __post_init__(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not self.fixed_tau > 0:
            raise ValueError("fixed_tau must be positive")
        if self.context_limit < 1:
            raise ValueError("context_limit must be >= 1")


def validate_supervision(config: TrainConfig, bundle: SupervisionBundle) -> None:
    """Check the bundle supplies what the loss mode consumes, before any work."""
    mode = config.loss_mode
    if mode in _NEEDS_T1 and not bundle.topk1:
        raise ValueError(f"loss_mode {mode} requires a first-teacher top-k cache")
    if mode in _NEEDS_T2 and not bundle.topk2:
        raise ValueError(f"loss_mode {mode} requires a second-teacher top-k cache")
    if mode in _NEEDS_PSEUDO and config.mixing.p_pseudo > 0 and not bundle.pseudo:
        raise ValueError(f"loss_mode {mode} requires pseudo-label records")
    if mode == "A5" and bundle.teacher_params is None:
        raise ValueError("loss_mode A5 requires teacher parameters for hidden states")


@dataclass
class _Prepared:
    """Per-example supervision resolved once before the epoch loop."""

    target: list[int]            # selected summary + EOS
    provenance: str
    t1_logits: np.ndarray | None
    t2_logits: np.ndarray | None
    teacher_entropy: float | None


def _prepare_example(
    i: int, ex: CorpusExample, config: TrainConfig, bundle: SupervisionBundle
) -> _Prepared:
    mode = config.loss_mode
    summary, provenance = list(ex.summary), "gold"
    if mode in _NEEDS_PSEUDO and config.mixing.p_pseudo > 0:
        summary, provenance = sample_target(
            ex.summary, bundle.pseudo.get(ex.example_id, []), config.mixing, i
        )
    target = _target_with_eos(summary)

    rec_id = ex.example_id
    if provenance.startswith("pseudo:"):
        rec_id = pseudo_variant_id(ex.example_id, provenance.split(":", 1)[1])

    t1 = t2 = None
    h_bar = None
    if mode in _NEEDS_T1:
        if rec_id not in bundle.topk1:
            raise ValueError(f"missing cache record {rec_id} for teacher 1")
        t1 = cached_teacher_logits(bundle.topk1[rec_id], len(target))
        if mode in _ADAPTIVE_TAU:
            p = np.exp(t1)
            p = p / p.sum(axis=1, keepdims=True)
            h_bar = float(np.atleast_1d(entropy(p)).mean())
    if mode in _NEEDS_T2:
        if rec_id not in bundle.topk2:
            raise ValueError(f"missing cache record {rec_id} for teacher 2")
        t2 = cached_teacher_logits(bundle.topk2[rec_id], len(target))
    return _Prepared(target, provenance, t1, t2, h_bar)


def _compute_cpdp_anchor(prepared: list[_Prepared], n_tokens: int) -> CpdpAnchor:
    """Mean inter-teacher KL over the first calibration tokens, corpus order."""
    d1, d2 = [], []
    for prep in prepared:
        if prep.t1_logits is None or prep.t2_logits is None:
            continue
        for t in range(len(prep.target)):
            e1 = np.exp(prep.t1_logits[t])
            e2 = np.exp(prep.t2_logits[t])
            d1.append(e1 / e1.sum())
            d2.append(e2 / e2.sum())
            if len(d1) >= n_tokens:
                break
        if len(d1) >= n_tokens:
            break
    if not d1:
        raise ValueError("no calibration tokens available for the anchor")
    return compute_anchor(np.array(d1), np.array(d2))


@dataclass
class TrainResult:
    params: ToyModelParams
    projection: np.ndarray | None
    hbar_batch: float | None
    anchor: CpdpAnchor | None
    metrics: list[dict]


def train(
    config: TrainConfig,
    corpus: Corpus,
    bundle: SupervisionBundle | None = None,
    val_corpus: Corpus | None = None,
) -> TrainResult:
    """Plain gradient descent under the configured loss mode.

    Deterministic for a fixed (config, corpus, bundle). Raises
    TrainingDiverged if the loss leaves the finite range.
    """
    bundle = bundle or SupervisionBundle()
    validate_supervision(config, bundle)
    mode = config.loss_mode
    v = corpus.vocab_size
    n = len(corpus.examples)
    if n == 0:
        raise ValueError("cannot train on an empty corpus")

    params = init_params(v, config.hidden_dim, np.random.default_rng([config.seed, 1]))
    projection = None
    if mode == "A5":
        d_t = bundle.teacher_params.hidden_dim
        projection = 0.2 * np.random.default_rng([config.seed, 3]).standard_normal(
            (config.hidden_dim, d_t)
        )
    order_rng = np.random.default_rng([config.seed, 2])

    prepared = [
        _prepare_example(i, ex, config, bundle) for i, ex in enumerate(corpus.examples)
    ]
    anchor = None
    if mode == "EWAD_CPDP":
        anchor = _compute_cpdp_anchor(prepared, config.anchor_tokens)

    hbar_sum, hbar_count = 0.0, 0
    metrics: list[dict] = []

    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        sums = {"loss": 0.0, "ce": 0.0, "kd": 0.0, "inter": 0.0, "cpdp": 0.0}
        lam_sum, lam_count, n_batches = 0.0, 0, 0

        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            bsz = len(batch_idx)
            docs = [corpus.examples[i].document for i in batch_idx]
            tgts = [prepared[i].target for i in batch_idx]
            ls = max(len(d) for d in docs)
            lt = max(len(t) for t in tgts)

            src = np.full((bsz, ls), EOS_ID, dtype=int)
            src_mask = np.zeros((bsz, ls), dtype=bool)
            tgt = np.full((bsz, lt), EOS_ID, dtype=int)
            tgt_in = np.full((bsz, lt), EOS_ID, dtype=int)
            tgt_mask = np.zeros((bsz, lt), dtype=bool)
            for j, (doc, t_seq) in enumerate(zip(docs, tgts)):
                src[j, : len(doc)] = doc
                src_mask[j, : len(doc)] = True
                tgt[j, : len(t_seq)] = t_seq
                tgt_in[j, 0] = BOS_ID
                tgt_in[j, 1 : len(t_seq)] = t_seq[:-1]
                tgt_mask[j, : len(t_seq)] = True

            logits, hidden, fcache = forward_batch(params, src, src_mask, tgt_in, tgt_mask)
            teacher_hidden = None
            if mode == "A5":
                _, teacher_hidden, _ = forward_batch(
                    bundle.teacher_params, src, src_mask, tgt_in, tgt_mask
                )

            hbar_batch_mean = None
            if mode in _ADAPTIVE_TAU:
                batch_hbars = [prepared[i].teacher_entropy for i in batch_idx]
                hbar_batch_mean = float(np.mean(batch_hbars))
                hbar_sum += float(np.sum(batch_hbars))
                hbar_count += bsz

            dlogits = np.zeros_like(logits)
            dhidden = np.zeros_like(hidden) if mode == "A5" else None
            dproj = np.zeros_like(projection) if projection is not None else None

            for j, i in enumerate(batch_idx):
                prep = prepared[i]
                tb = TokenBatch(
                    gold_ids=tgt[j],
                    mask=tgt_mask[j],
                    student_logits=logits[j],
                    teacher1_logits=_padded(prep.t1_logits, lt, v),
                    teacher2_logits=_padded(prep.t2_logits, lt, v),
                )
                if mode == "CE":
                    value, g = ce_loss(tb)
                    dlogits[j] = g / bsz
                    sums["loss"] += value
                    sums["ce"] += value
                elif mode in ("A2", "A3", "A4", "A5"):
                    if mode in _ADAPTIVE_TAU:
                        p1 = np.exp(tb.teacher1_logits)
                        p1 = p1 / p1.sum(axis=1, keepdims=True)
                        tau = adaptive_tau(
                            p1, tgt_mask[j], hbar_batch_mean, config.adaptive_tau_cfg
                        )
                    else:
                        tau = config.fixed_tau
                    hp = None
                    if mode == "A5":
                        hp = HiddenPair(hidden[j], teacher_hidden[j], projection)
                    value, grads = standard_total(tb, hp, config.weights, tau)
                    dlogits[j] = grads.logits / bsz
                    if grads.hidden is not None:
                        dhidden[j] = grads.hidden / bsz
                        dproj += grads.projection / bsz
                    sums["loss"] += value
                    for key in ("ce", "kd", "inter"):
                        sums[key] += grads.components[key]
                else:
                    if mode == "EWAD":
                        value, g, tr = ewad_loss(
                            tb, config.reliability, config.fixed_tau,
                            lambda_override=config.lambda_override,
                            equal_weights=config.equal_teacher_weights,
                        )
                        cp_value = 0.0
                    else:
                        value, g, tr, cp = combined_total(
                            tb, config.reliability, anchor, config.weights,
                            config.fixed_tau,
                            lambda_override=config.lambda_override,
                            equal_weights=config.equal_teacher_weights,
                        )
                        cp_value = float(cp.value.mean())
                    dlogits[j] = g / bsz
                    sums["loss"] += value
                    sums["ce"] += float(tr.ce_term.mean())
                    sums["kd"] += float(tr.kd_term.mean())
                    sums["cpdp"] += cp_value
                    lam_sum += float(tr.gate.sum())
                    lam_count += tr.gate.size

            grads = backward_batch(params, fcache, dlogits, dhidden)
            params.embed -= config.learning_rate * grads.embed
            params.recur -= config.learning_rate * grads.recur
            params.out -= config.learning_rate * grads.out
            if dproj is not None:
                projection -= config.learning_rate * dproj
            n_batches += 1
            if not (
                np.isfinite(sums["loss"])
                and np.all(np.isfinite(params.out))
                and np.all(np.isfinite(params.recur))
                and np.all(np.isfinite(params.embed))
            ):
                raise TrainingDiverged(
                    f"training diverged at epoch {epoch}, batch {n_batches - 1}: "
                    "non-finite loss or parameters"
                )

        row = {
            "epoch": epoch,
            "loss": sums["loss"] / n,
            "ce": sums["ce"] / n,
            "kd": sums["kd"] / n,
            "inter": sums["inter"] / n,
            "cpdp": sums["cpdp"] / n,
            "lambda_mean": (lam_sum / lam_count) if lam_count else None,
        }
        if not np.isfinite(row["loss"]):
            raise TrainingDiverged(
                f"non-finite training loss at epoch {epoch}: {row['loss']}"
            )
        if val_corpus is not None:
            row["val_rougeL"] = evaluate_rouge(
                params, val_corpus, max_len=config.gen_max_len
            ).rougeL
        metrics.append(row)

    hbar = (hbar_sum / hbar_count) if hbar_count else None
    return TrainResult(
        params=params, projection=projection, hbar_batch=hbar,
        anchor=anchor, metrics=metrics,
    )


def _padded(arr: np.ndarray | None, length: int, vocab: int) -> np.ndarray | None:
    if arr is None:
        return None
    if arr.shape[0] == length:
        return arr
    out = np.zeros((length, vocab))
    out[: arr.shape[0]] = arr
    return out


def evaluate_rouge(
    params: ToyModelParams, corpus: Corpus, max_len: int = 16
) -> RougeScores:
    """Greedy-decode every example and average token-level F1 scores."""
    if not corpus.examples:
        raise ValueError("cannot evaluate on an empty corpus")
    r1 = r2 = rl = 0.0
    for ex in corpus.examples:
        hyp = generate(params, ex.document, mode="greedy", max_len=max_len)
        r1 += rouge_n(hyp, ex.summary, 1)
        r2 += rouge_n(hyp, ex.summary, 2)
        rl += rouge_l(hyp, ex.summary)
    n = len(corpus.examples)
    return RougeScores(rouge1=r1 / n, rouge2=r2 / n, rougeL=rl / n)
