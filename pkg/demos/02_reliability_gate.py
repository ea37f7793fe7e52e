# The two-axis reliability decomposition: per-token teacher confidence,
# confidence-proportional weights, inter-teacher agreement, and the sigmoid
# gate that routes supervision between teacher KD and gold labels.

import numpy as np

from relkd import ReliabilityConfig, gate, softmax_t, token_reliability

cfg = ReliabilityConfig()  # steepness 5.0, threshold 0.5, weight temperature 1.0
np.set_printoptions(precision=4, suppress=True)

print("gate response curve lambda = sigmoid(5 * (agreement - 0.5)):")
for a in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"  agreement={a:.2f} -> lambda={gate(a, cfg):.4f}")
print("full agreement routes ~92% of the token's loss to teacher KD;")
print("total conflict routes ~92% back to gold cross-entropy.\n")

scenarios = {
    "confident agreement": (np.array([8.0, 0.0, 0.0, 0.0]),
                            np.array([7.5, 0.5, 0.0, 0.0])),
    "confident conflict": (np.array([8.0, 0.0, 0.0, 0.0]),
                           np.array([0.0, 8.0, 0.0, 0.0])),
    "one flat teacher": (np.array([8.0, 0.0, 0.0, 0.0]),
                         np.array([0.1, 0.0, 0.1, 0.0])),
    "both flat": (np.array([0.1, 0.0, 0.1, 0.0]),
                  np.array([0.0, 0.1, 0.0, 0.1])),
}
for name, (z1, z2) in scenarios.items():
    r = token_reliability(softmax_t(z1, 1.0), softmax_t(z2, 1.0), cfg)
    print(f"{name:>20}: C=({r.c1:.3f},{r.c2:.3f}) w=({r.w1:.3f},{r.w2:.3f}) "
          f"A={r.agreement:.3f} lambda={r.gate:.3f}")

print()
print("confidence decides WHICH teacher to lean on (the weights);")
print("agreement decides WHETHER to trust teachers at all (the gate).")
