"""Independent oracles for the test suite.

Everything here is a deliberately naive, straight-line reimplementation using
the math module and explicit Python loops: no shared code with the package
beyond the contracts it checks. Gradient checks use central finite
differences at double precision.
"""

from __future__ import annotations

import math

import numpy as np

KL_FLOOR = 1e-12
ENTROPY_FLOOR = 1e-8
GATE_EPS = 1e-12


def softmax_scalar(zs, tau=1.0):
    m = max(z / tau for z in zs)
    e = [math.exp(z / tau - m) for z in zs]
    s = sum(e)
    return [x / s for x in e]


def entropy_scalar(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def kl_scalar(p, q):
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * math.log(pi / max(qi, KL_FLOOR))
    return total


def jsd_scalar(p, q):
    m = [(a + b) / 2.0 for a, b in zip(p, q)]
    return 0.5 * kl_scalar(p, m) + 0.5 * kl_scalar(q, m)


def sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def clip01(x):
    return min(max(x, 0.0), 1.0)


def ewad_forward_scalar(gold, mask, z_s, z_t1, z_t2,
                        k=5.0, delta=0.5, tau_w=1.0, tau=1.0,
                        lambda_override=None, equal_weights=False):
    """Straight-line recomputation of the gated routing loss value."""
    vocab = len(z_s[0])
    vals = []
    for t in range(len(gold)):
        if not mask[t]:
            continue
        p1 = softmax_scalar(z_t1[t])
        p2 = softmax_scalar(z_t2[t])
        c1 = clip01(1.0 - entropy_scalar(p1) / math.log(vocab))
        c2 = clip01(1.0 - entropy_scalar(p2) / math.log(vocab))
        if equal_weights:
            w1 = w2 = 0.5
        else:
            w1 = sigmoid_scalar((c1 - c2) / tau_w)
            w2 = 1.0 - w1
        a = clip01(1.0 - jsd_scalar(p1, p2) / math.log(2.0))
        if lambda_override is None:
            lam = min(max(sigmoid_scalar(k * (a - delta)), GATE_EPS), 1.0 - GATE_EPS)
        else:
            lam = lambda_override
        p1s = softmax_scalar(z_t1[t], tau)
        p2s = softmax_scalar(z_t2[t], tau)
        ps_soft = softmax_scalar(z_s[t], tau)
        kd = w1 * kl_scalar(p1s, ps_soft) + w2 * kl_scalar(p2s, ps_soft)
        ps = softmax_scalar(z_s[t])
        ce = -math.log(ps[gold[t]])
        vals.append(lam * kd + (1.0 - lam) * ce)
    return sum(vals) / len(vals)


def cpdp_forward_scalar(mask, z_s, z_t1, z_t2, delta_star, clamp=100.0,
                        frozen_entropy=None):
    """Straight-line recomputation of the divergence-gap regularizer.

    ``frozen_entropy`` substitutes fixed per-position student entropies,
    which is what the detached-normalizer gradient check differentiates.
    """
    vals = []
    for t in range(len(z_s)):
        if not mask[t]:
            continue
        p1 = softmax_scalar(z_t1[t])
        p2 = softmax_scalar(z_t2[t])
        ps = softmax_scalar(z_s[t])
        if frozen_entropy is None:
            h = entropy_scalar(ps)
        else:
            h = frozen_entropy[t]
        h = max(h, ENTROPY_FLOOR)
        r = (kl_scalar(p1, ps) - kl_scalar(p2, ps)) / h - delta_star
        v = r * r
        vals.append(clamp if v >= clamp else v)
    return sum(vals) / len(vals)


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function over an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    """Max abs difference over max(1, largest gradient magnitude)."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(1.0, np.abs(analytic).max(), np.abs(numeric).max())
    return float(np.abs(analytic - numeric).max() / scale)


def lcs_bruteforce(a, b):
    """LCS length by enumerating every subsequence of the shorter sequence."""
    if len(a) > len(b):
        a, b = b, a

    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)

    best = 0
    for bits in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if bits >> i & 1]
        if len(sub) > best and is_subseq(sub, b):
            best = len(sub)
    return best


def random_instance(rng, vocab=None, seq_len=None, scale=2.0):
    """Random logits instance for gradient and value checks."""
    vocab = int(vocab if vocab is not None else rng.integers(3, 9))
    seq_len = int(seq_len if seq_len is not None else rng.integers(1, 7))
    mask = rng.random(seq_len) < 0.8
    if not mask.any():
        mask[int(rng.integers(seq_len))] = True
    return {
        "gold": rng.integers(0, vocab, seq_len),
        "mask": mask,
        "z_s": scale * rng.standard_normal((seq_len, vocab)),
        "z_t1": scale * rng.standard_normal((seq_len, vocab)),
        "z_t2": scale * rng.standard_normal((seq_len, vocab)),
    }
