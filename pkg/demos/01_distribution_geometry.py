# Probability-vector geometry: temperature softmax, entropy, KL, and
# Jensen-Shannon divergence, the substrate every loss is built from.

import numpy as np

from relkd import entropy, jsd, kl, softmax_t

np.set_printoptions(precision=4, suppress=True)

z = np.array([2.0, 0.5, 0.0, -1.0])
print("logits:", z)
for tau in (0.5, 0.8, 1.0, 2.0, 100.0):
    p = softmax_t(z, tau)
    print(f"  tau={tau:>5}: p={p}  H={entropy(p):.4f} nats")
print("low temperature sharpens, high temperature flattens toward uniform;")
print("entropy runs from 0 (one-hot) to ln|V| =", f"{np.log(4):.4f}\n")

sharp = softmax_t(z, 0.5)
flat = softmax_t(z, 2.0)
uniform = np.full(4, 0.25)
print("KL(sharp || flat)   =", f"{kl(sharp, flat):.4f}")
print("KL(flat || sharp)   =", f"{kl(flat, sharp):.4f}   (asymmetric)")
print("KL(p || p)          =", kl(sharp, sharp))
print()

print("JSD is the symmetric, bounded alternative used for teacher agreement:")
print("JSD(sharp, flat)    =", f"{jsd(sharp, flat):.4f}")
print("JSD(flat, sharp)    =", f"{jsd(flat, sharp):.4f}   (same)")
print("JSD(p, p)           =", jsd(sharp, sharp))
one_hot_a = np.array([1.0, 0.0, 0.0, 0.0])
one_hot_b = np.array([0.0, 1.0, 0.0, 0.0])
print("JSD(disjoint one-hots) =", f"{jsd(one_hot_a, one_hot_b):.4f}",
      "= ln 2 =", f"{np.log(2):.4f}  (the maximum)")
print()
print("uniform entropy check:", f"{entropy(uniform):.4f}", "=", f"{np.log(4):.4f}")
