"""Training objectives with hand-derived gradients.

Every loss returns its scalar value together with analytic gradients with
respect to the student logits (and, for the hidden-state match, the student
hiddens and the projection). Teachers are frozen supervision: no gradient
flows into teacher distributions, reliability weights, or the trust gate.

Conventions shared by all losses:
  * aggregation is the mean over masked (non-padding) positions;
  * reliability quantities (confidence, agreement, gate) are computed from
    raw teacher softmaxes, while distillation KL terms use the distillation
    temperature;
  * the divergence-gap regularizer runs at temperature 1 and treats the
    student entropy as a constant during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distmath import entropy, kl, log_softmax_t, sigmoid, softmax_t
from .reliability import (
    ReliabilityConfig,
    TokenReliability,
    agreement_array,
    confidence_array,
    gate_array,
    weights_array,
)

# Floor for the student entropy in the divergence-gap ratio; the ratio is
# undefined at H = 0 and a (near-)deterministic student would otherwise blow
# it up. Floored positions are flagged in the trace.
ENTROPY_FLOOR = 1e-8

# Keeps the adaptive temperature strictly inside (tau_min, tau_max) when the
# sigmoid saturates in float64.
_OPEN_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the composite objective.

    ``alpha_hard`` is derived so the three alphas sum to one by construction.
    ``mu`` scales the divergence-gap regularizer; per-token regularizer values
    are clamped at ``cpdp_clamp``.
    """

    alpha_kd: float = 0.01
    alpha_inter: float = 0.0
    mu: float = 0.05
    cpdp_clamp: float = 100.0
    alpha_hard: float = field(init=False)

    def __post_init__(self) -> None:
        if self.alpha_kd < 0 or self.alpha_inter < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha_kd + self.alpha_inter > 1.0:
            raise ValueError("alpha_kd + alpha_inter must not exceed 1")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not self.cpdp_clamp > 0:
            raise ValueError("cpdp_clamp must be positive")
        object.__setattr__(self, "alpha_hard", 1.0 - self.alpha_kd - self.alpha_inter)


@dataclass(frozen=True)
class AdaptiveTauConfig:
    """Bounds for the per-sample distillation temperature."""

    tau_min: float = 0.5
    tau_max: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_min < self.tau_max:
            raise ValueError("require 0 < tau_min < tau_max")


@dataclass(frozen=True)
class CpdpAnchor:
    """Fixed inter-teacher divergence target, computed once before training."""

    delta_star: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.delta_star):
            raise ValueError("delta_star must be finite")


class TokenBatch:
    """One teacher-forced sequence: gold ids, padding mask, per-position logits.

    ``student_logits`` has shape (T, V); teacher logits, when present, share
    it. The mask selects the non-padding positions every loss averages over.
    """

    def __init__(
        self,
        gold_ids,
        mask,
        student_logits,
        teacher1_logits=None,
        teacher2_logits=None,
    ) -> None:
        self.gold_ids = np.asarray(gold_ids, dtype=int)
        self.mask = np.asarray(mask, dtype=bool)
        self.student_logits = np.asarray(student_logits, dtype=float)
        self.teacher1_logits = (
            None if teacher1_logits is None else np.asarray(teacher1_logits, dtype=float)
        )
        self.teacher2_logits = (
            None if teacher2_logits is None else np.asarray(teacher2_logits, dtype=float)
        )
        if self.student_logits.ndim != 2:
            raise ValueError("student_logits must have shape (T, V)")
        t, v = self.student_logits.shape
        if t < 1:
            raise ValueError("batch must contain at least one position")
        if self.gold_ids.shape != (t,) or self.mask.shape != (t,):
            raise ValueError("gold_ids and mask must have length T")
        if np.any(self.gold_ids < 0) or np.any(self.gold_ids >= v):
            raise ValueError("gold ids must lie in [0, vocab)")
        for name, z in (("student", self.student_logits),
                        ("teacher1", self.teacher1_logits),
                        ("teacher2", self.teacher2_logits)):
            if z is None:
                continue
            if z.shape != (t, v):
                raise ValueError(f"{name} logits must have shape (T, V)")
            if not np.all(np.isfinite(z)):
                raise ValueError(f"{name} logits must be finite")

    @property
    def seq_len(self) -> int:
        return self.student_logits.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.student_logits.shape[1]


class HiddenPair:
    """Per-position student/teacher hidden states plus the learned projection.

    The projection maps student space to teacher space: (T, d_S) @ (d_S, d_T).
    """

    def __init__(self, student_hidden, teacher_hidden, projection) -> None:
        self.student_hidden = np.asarray(student_hidden, dtype=float)
        self.teacher_hidden = np.asarray(teacher_hidden, dtype=float)
        self.projection = np.asarray(projection, dtype=float)
        if self.student_hidden.ndim != 2 or self.teacher_hidden.ndim != 2:
            raise ValueError("hidden states must have shape (T, d)")
        if self.student_hidden.shape[0] != self.teacher_hidden.shape[0]:
            raise ValueError("student and teacher hidden position counts differ")
        if self.projection.shape != (
            self.student_hidden.shape[1],
            self.teacher_hidden.shape[1],
        ):
            raise ValueError("projection shape must be (d_S, d_T)")


@dataclass
class EwadTrace:
    """Per-masked-position reliability and loss components, as arrays."""

    positions: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    agreement: np.ndarray
    gate: np.ndarray
    kd_term: np.ndarray
    ce_term: np.ndarray

    def records(self) -> list[TokenReliability]:
        return [
            TokenReliability(
                c1=float(self.c1[i]),
                c2=float(self.c2[i]),
                w1=float(self.w1[i]),
                w2=float(self.w2[i]),
                agreement=float(self.agreement[i]),
                gate=float(self.gate[i]),
            )
            for i in range(len(self.positions))
        ]


@dataclass
class CpdpTrace:
    """Per-masked-position regularizer diagnostics."""

    positions: np.ndarray
    kl_t1: np.ndarray
    kl_t2: np.ndarray
    student_entropy: np.ndarray
    ratio: np.ndarray
    value: np.ndarray
    clamped: np.ndarray
    entropy_floored: np.ndarray


@dataclass
class StandardGrads:
    """Gradients of the composite baseline objective, plus the unweighted
    per-component values (for metrics logging without recomputation)."""

    logits: np.ndarray
    hidden: np.ndarray | None = None
    projection: np.ndarray | None = None
    components: dict[str, float] = field(default_factory=dict)


def _masked_positions(mask: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("mask selects no positions; masked mean is undefined")
    return idx


def ce_loss(batch: TokenBatch) -> tuple[float, np.ndarray]:
    """Gold negative log-likelihood, averaged over masked positions."""
    idx = _masked_positions(batch.mask)
    m = idx.size
    logp = log_softmax_t(batch.student_logits[idx], 1.0)
    value = -logp[np.arange(m), batch.gold_ids[idx]].sum() / m

    grad = np.zeros_like(batch.student_logits)
    p = np.exp(logp)
    p[np.arange(m), batch.gold_ids[idx]] -= 1.0
    grad[idx] = p / m
    return float(value), grad


def kd_loss(batch: TokenBatch, tau: float) -> tuple[float, np.ndarray]:
    """tau^2-scaled KL between temperature-softened teacher and student."""
    if batch.teacher1_logits is None:
        raise ValueError("kd_loss requires teacher1 logits")
    idx = _masked_positions(batch.mask)
    m = idx.size
    p_t = softmax_t(batch.teacher1_logits[idx], tau)
    p_s = softmax_t(batch.student_logits[idx], tau)
    value = tau * tau * kl(p_t, p_s).sum() / m

    grad = np.zeros_like(batch.student_logits)
    grad[idx] = tau * (p_s - p_t) / m
    return float(value), grad


def inter_match_loss(
    h: HiddenPair, mask
) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared distance between unit-normalized projected student hiddens and
    unit-normalized teacher hiddens; returns (value, d/d_hidden, d/d_proj)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (h.student_hidden.shape[0],):
        raise ValueError("mask must have one entry per position")
    idx = _masked_positions(mask)
    m = idx.size

    hs = h.student_hidden[idx]
    ht = h.teacher_hidden[idx]
    a = hs @ h.projection
    na = np.linalg.norm(a, axis=1)
    nt = np.linalg.norm(ht, axis=1)
    if np.any(na == 0) or np.any(nt == 0):
        raise ValueError("zero-norm hidden vector; normalization undefined")
    u = a / na[:, None]
    v = ht / nt[:, None]
    value = ((u - v) ** 2).sum() / m

    # d||u - v||^2 / da = 2((u.v) u - v) / ||a||, with u = a/||a||.
    uv = (u * v).sum(axis=1)
    da = 2.0 * (uv[:, None] * u - v) / na[:, None]
    grad_hidden = np.zeros_like(h.student_hidden)
    grad_hidden[idx] = da @ h.projection.T / m
    grad_proj = hs.T @ da / m
    return float(value), grad_hidden, grad_proj


def standard_total(
    batch: TokenBatch,
    h: HiddenPair | None,
    weights: LossWeights,
    tau: float,
) -> tuple[float, StandardGrads]:
    """alpha_hard*CE + alpha_kd*KD + alpha_inter*InterMatch.

    Zero-weighted components are skipped entirely, so the degenerate weight
    settings reproduce the surviving components exactly.
    """
    ce_v, grad_logits = ce_loss(batch)
    value = weights.alpha_hard * ce_v
    grad_logits = weights.alpha_hard * grad_logits
    grads = StandardGrads(
        logits=grad_logits, components={"ce": ce_v, "kd": 0.0, "inter": 0.0}
    )

    if weights.alpha_kd > 0:
        kd_v, kd_g = kd_loss(batch, tau)
        value += weights.alpha_kd * kd_v
        grads.logits += weights.alpha_kd * kd_g
        grads.components["kd"] = kd_v

    if weights.alpha_inter > 0:
        if h is None:
            raise ValueError("alpha_inter > 0 requires hidden states")
        iv, gh, gw = inter_match_loss(h, batch.mask)
        value += weights.alpha_inter * iv
        grads.hidden = weights.alpha_inter * gh
        grads.projection = weights.alpha_inter * gw
        grads.components["inter"] = iv

    return float(value), grads


def ewad_loss(
    batch: TokenBatch,
    rcfg: ReliabilityConfig,
    tau: float,
    *,
    lambda_override: float | None = None,
    equal_weights: bool = False,
) -> tuple[float, np.ndarray, EwadTrace]:
    """Reliability-gated routing between weighted teacher KD and gold CE.

    Per masked position: gate * (w1 KL(p_T1 || p_S) + w2 KL(p_T2 || p_S))
    + (1 - gate) * (-log p_S(gold)), averaged over the mask. Confidence and
    agreement come from raw (temperature-1) teacher softmaxes; the KL terms
    use the distillation temperature. Gate and weights are data-dependent
    constants: the gradient only flows through the student distributions.

    ``lambda_override`` pins the gate (ablation arms); ``equal_weights``
    pins w1 = w2 = 0.5.
    """
    if batch.teacher1_logits is None or batch.teacher2_logits is None:
        raise ValueError("ewad_loss requires both teacher logit sequences")
    idx = _masked_positions(batch.mask)
    m = idx.size

    t1_raw = softmax_t(batch.teacher1_logits[idx], 1.0)
    t2_raw = softmax_t(batch.teacher2_logits[idx], 1.0)
    c1 = confidence_array(t1_raw)
    c2 = confidence_array(t2_raw)
    if equal_weights:
        w1 = np.full(m, 0.5)
        w2 = np.full(m, 0.5)
    else:
        w1, w2 = weights_array(c1, c2, rcfg)
    a = agreement_array(t1_raw, t2_raw)
    if lambda_override is None:
        lam = gate_array(a, rcfg)
    else:
        lam = np.full(m, float(lambda_override))

    t1_soft = softmax_t(batch.teacher1_logits[idx], tau)
    t2_soft = softmax_t(batch.teacher2_logits[idx], tau)
    s_soft = softmax_t(batch.student_logits[idx], tau)
    kd_term = w1 * kl(t1_soft, s_soft) + w2 * kl(t2_soft, s_soft)

    logp = log_softmax_t(batch.student_logits[idx], 1.0)
    gold = batch.gold_ids[idx]
    ce_term = -logp[np.arange(m), gold]

    value = (lam * kd_term + (1.0 - lam) * ce_term).sum() / m

    s_raw = np.exp(logp)
    ce_g = s_raw.copy()
    ce_g[np.arange(m), gold] -= 1.0
    mix = w1[:, None] * t1_soft + w2[:, None] * t2_soft
    kd_g = (s_soft - mix) / tau
    grad = np.zeros_like(batch.student_logits)
    grad[idx] = (lam[:, None] * kd_g + (1.0 - lam)[:, None] * ce_g) / m

    trace = EwadTrace(
        positions=idx, c1=c1, c2=c2, w1=w1, w2=w2,
        agreement=a, gate=lam, kd_term=kd_term, ce_term=ce_term,
    )
    return float(value), grad, trace


def cpdp_loss(
    batch: TokenBatch,
    anchor: CpdpAnchor,
    weights: LossWeights,
) -> tuple[float, np.ndarray, CpdpTrace]:
    """Squared deviation of the entropy-normalized divergence gap from the
    fixed inter-teacher anchor, clamped per token and averaged over the mask.

    The student entropy normalizer enters the forward value but is held
    constant during differentiation, blocking the trivial raise-the-entropy
    escape; clamped positions contribute zero gradient.
    """
    if batch.teacher1_logits is None or batch.teacher2_logits is None:
        raise ValueError("cpdp_loss requires both teacher logit sequences")
    idx = _masked_positions(batch.mask)
    m = idx.size

    p_t1 = softmax_t(batch.teacher1_logits[idx], 1.0)
    p_t2 = softmax_t(batch.teacher2_logits[idx], 1.0)
    p_s = softmax_t(batch.student_logits[idx], 1.0)

    kl1 = np.atleast_1d(kl(p_t1, p_s))
    kl2 = np.atleast_1d(kl(p_t2, p_s))
    h_s = np.atleast_1d(entropy(p_s))
    floored = h_s < ENTROPY_FLOOR
    h_eff = np.where(floored, ENTROPY_FLOOR, h_s)

    ratio = (kl1 - kl2) / h_eff - anchor.delta_star
    raw = ratio**2
    clamped = raw >= weights.cpdp_clamp
    value_tok = np.where(clamped, weights.cpdp_clamp, raw)
    value = value_tok.sum() / m

    # With H held constant, d(KL1 - KL2)/dz_S = p_T2 - p_T1: the student
    # softmax cancels between the two divergences.
    coeff = np.where(clamped, 0.0, 2.0 * ratio / h_eff)
    grad = np.zeros_like(batch.student_logits)
    grad[idx] = coeff[:, None] * (p_t2 - p_t1) / m

    trace = CpdpTrace(
        positions=idx, kl_t1=kl1, kl_t2=kl2, student_entropy=h_s,
        ratio=ratio, value=value_tok, clamped=clamped, entropy_floored=floored,
    )
    return float(value), grad, trace


def compute_anchor(
    teacher1_dists: np.ndarray, teacher2_dists: np.ndarray
) -> CpdpAnchor:
    """Mean inter-teacher KL over a calibration set of distribution pairs."""
    p1 = np.atleast_2d(np.asarray(teacher1_dists, dtype=float))
    p2 = np.atleast_2d(np.asarray(teacher2_dists, dtype=float))
    if p1.shape[0] == 0:
        raise ValueError("calibration set is empty")
    if p1.shape != p2.shape:
        raise ValueError("calibration sets must have matching shapes")
    return CpdpAnchor(delta_star=float(np.atleast_1d(kl(p1, p2)).mean()))


def combined_total(
    batch: TokenBatch,
    rcfg: ReliabilityConfig,
    anchor: CpdpAnchor,
    weights: LossWeights,
    tau: float,
    *,
    lambda_override: float | None = None,
    equal_weights: bool = False,
) -> tuple[float, np.ndarray, EwadTrace, CpdpTrace]:
    """Gated routing objective plus mu times the divergence-gap regularizer."""
    e_value, e_grad, e_trace = ewad_loss(
        batch, rcfg, tau,
        lambda_override=lambda_override, equal_weights=equal_weights,
    )
    c_value, c_grad, c_trace = cpdp_loss(batch, anchor, weights)
    value = e_value + weights.mu * c_value
    grad = e_grad + weights.mu * c_grad
    return float(value), grad, e_trace, c_trace


def adaptive_tau(
    teacher_dists: np.ndarray,
    mask,
    batch_mean_entropy: float,
    cfg: AdaptiveTauConfig,
) -> float:
    """Per-sample temperature interpolated by teacher entropy vs. batch mean.

    tau = tau_min + (tau_max - tau_min) * sigmoid(H_sample - H_batch); the
    interpolant is clipped so tau stays strictly inside the open interval.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = _masked_positions(mask)
    h_bar = float(np.atleast_1d(entropy(np.asarray(teacher_dists)[idx])).mean())
    t = float(sigmoid(h_bar - batch_mean_entropy))
    t = min(max(t, _OPEN_EPS), 1.0 - _OPEN_EPS)
    return cfg.tau_min + (cfg.tau_max - cfg.tau_min) * t
