"""Two-axis token reliability: teacher confidence, confidence-proportional
weights, inter-teacher agreement, and the sigmoid trust gate.

Scalar functions validate their inputs and serve the public API; the
``*_array`` variants run the same formulas over (T, V) position batches and
are what the loss routines call in their inner loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distmath import check_prob_dist, entropy, jsd, sigmoid

# Keeps gate values strictly inside (0, 1) even when the sigmoid saturates
# in float64 (|x| >~ 37).
_OPEN_EPS = 1e-12


@dataclass(frozen=True)
class ReliabilityConfig:
    """Gate and weighting constants.

    Defaults are the reference operating point: steepness 5.0, threshold 0.5,
    weight temperature 1.0.
    """

    gate_steepness: float = 5.0
    gate_threshold: float = 0.5
    weight_temperature: float = 1.0

    def __post_init__(self) -> None:
        if not self.gate_steepness > 0:
            raise ValueError("gate_steepness must be positive")
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ValueError("gate_threshold must lie in [0, 1]")
        if not self.weight_temperature > 0:
            raise ValueError("weight_temperature must be positive")


@dataclass(frozen=True)
class TokenReliability:
    """Per-token reliability record: confidences, weights, agreement, gate."""

    c1: float
    c2: float
    w1: float
    w2: float
    agreement: float
    gate: float


def confidence_array(p: np.ndarray) -> np.ndarray:
    """1 - H(p)/ln|V| over the last axis, clipped into [0, 1]."""
    p = np.asarray(p, dtype=float)
    c = 1.0 - entropy(p) / np.log(p.shape[-1])
    return np.clip(np.atleast_1d(c), 0.0, 1.0)


def weights_array(
    c1: np.ndarray, c2: np.ndarray, cfg: ReliabilityConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Two-way softmax of paired confidences at the weight temperature."""
    w1 = np.atleast_1d(sigmoid((np.asarray(c1) - np.asarray(c2)) / cfg.weight_temperature))
    return w1, 1.0 - w1


def agreement_array(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """1 - JSD(p1, p2)/ln 2 over the last axis, clipped into [0, 1]."""
    a = 1.0 - jsd(p1, p2) / np.log(2.0)
    return np.clip(np.atleast_1d(a), 0.0, 1.0)


def gate_array(a: np.ndarray, cfg: ReliabilityConfig) -> np.ndarray:
    """sigmoid(k * (a - delta)), clipped to stay strictly inside (0, 1)."""
    g = sigmoid(cfg.gate_steepness * (np.asarray(a, dtype=float) - cfg.gate_threshold))
    return np.clip(np.atleast_1d(g), _OPEN_EPS, 1.0 - _OPEN_EPS)


def confidence(p: np.ndarray) -> float:
    """1 - H(p)/ln|V|: 0 for uniform, 1 for one-hot."""
    p = check_prob_dist(p)
    return float(confidence_array(p)[0])


def confidence_weights(
    c1: float, c2: float, cfg: ReliabilityConfig
) -> tuple[float, float]:
    """Two-way softmax of (c1, c2); w1 > w2 iff c1 > c2."""
    w1, w2 = weights_array(np.array([c1]), np.array([c2]), cfg)
    return float(w1[0]), float(w2[0])


def agreement(p1: np.ndarray, p2: np.ndarray) -> float:
    """1 - JSD(p1, p2)/ln 2: 1 for identical teachers, 0 for disjoint."""
    p1 = check_prob_dist(p1, "p1")
    p2 = check_prob_dist(p2, "p2")
    if p1.shape[-1] != p2.shape[-1]:
        raise ValueError("teacher distributions must share a vocabulary")
    return float(agreement_array(p1, p2)[0])


def gate(a: float, cfg: ReliabilityConfig) -> float:
    """sigmoid(k * (a - delta)); strictly increasing, inside (0, 1)."""
    return float(gate_array(np.array([a]), cfg)[0])


def token_reliability(
    p1: np.ndarray, p2: np.ndarray, cfg: ReliabilityConfig
) -> TokenReliability:
    """Full reliability decomposition for one token position."""
    c1 = confidence(p1)
    c2 = confidence(p2)
    w1, w2 = confidence_weights(c1, c2, cfg)
    a = agreement(p1, p2)
    lam = gate(a, cfg)
    return TokenReliability(c1=c1, c2=c2, w1=w1, w2=w2, agreement=a, gate=lam)
