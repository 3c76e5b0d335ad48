"""Token reliability gating: scores, soft weights, residual attenuation.

Run: python3 demos/03_token_gating.py
"""

import numpy as np

from douc import GateConfig, TokenSequence, apply_gate, gate_weights, reliability_scores

rng = np.random.default_rng(2)

# four patch tokens with very different magnitudes
tokens = np.zeros((5, 6), dtype=np.float32)
tokens[0] = rng.standard_normal(6)           # CLS
tokens[1] = 0.1 * rng.standard_normal(6)     # weak patch
tokens[2] = rng.standard_normal(6)
tokens[3] = rng.standard_normal(6)
tokens[4] = 5.0 * rng.standard_normal(6)     # dominant patch
x = TokenSequence(tokens, 2, 2)

scores = reliability_scores(x)
print("l2 reliability scores:", np.round(scores, 3))

config = GateConfig(layer_indices=(0,), gate_strength=0.5, gate_temperature=0.25)
weights = gate_weights(scores, config)
print("gate weights in (0,1):", np.round(weights, 3))

gated = apply_gate(x, weights, config.gate_strength)
before = np.linalg.norm(tokens[1:], axis=1)
after = np.linalg.norm(gated.tokens[1:], axis=1)
print("norm attenuation factors:", np.round(after / before, 3))
print("factors stay within [1 - alpha, 1] =", [1 - config.gate_strength, 1.0])

print("\nalpha = 0 leaves tokens bit-identical:",
      np.array_equal(apply_gate(x, weights, 0.0).tokens, tokens))
print("weights are scale invariant:",
      np.allclose(gate_weights(scores * 40.0, config), weights, atol=1e-6))
