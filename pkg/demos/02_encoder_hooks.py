"""The encoder's two hook points: per-layer transforms and aggregation replacement.

Run: python3 demos/02_encoder_hooks.py
"""

import numpy as np

from douc import LayerHook, TokenSequence, forward
from douc.proxy import uniform_affinity
from douc.vit import resample_token_rows

rng = np.random.default_rng(1)


def random_block(v=8, heads=2):
    from douc import BlockWeights

    s = 0.5 / np.sqrt(v)
    w = lambda *shape: (rng.standard_normal(shape) * s).astype(np.float32)
    z = lambda n: np.zeros(n, dtype=np.float32)
    return BlockWeights(
        ln1_gamma=np.ones(v, np.float32), ln1_beta=z(v),
        w_q=w(v, v), w_k=w(v, v), w_v=w(v, v), w_out=w(v, v),
        b_q=z(v), b_k=z(v), b_v=z(v), b_out=z(v),
        ln2_gamma=np.ones(v, np.float32), ln2_beta=z(v),
        ffn_w1=w(v, 4 * v), ffn_b1=z(4 * v), ffn_w2=w(4 * v, v), ffn_b2=z(v),
        head_count=heads,
    )


blocks = [random_block() for _ in range(3)]
x0 = TokenSequence(rng.standard_normal((5, 8)).astype(np.float32), 2, 2)

print("== plain forward")
out, _ = forward(x0, blocks)
print("final tokens:", out.tokens.shape)

print("\n== a layer hook that doubles patch tokens after block 1")


def double_patches(ts):
    t = ts.tokens.copy()
    t[1:] *= np.float32(2.0)
    return TokenSequence(t, ts.grid_h, ts.grid_w)


hooked, _ = forward(x0, blocks, hooks=[LayerHook(1, double_patches)])
print("output differs from plain:", not np.array_equal(hooked.tokens, out.tokens))

print("\n== capture the last block's value matrix")
_, values = forward(x0, blocks, last_block_mode="capture_values")
print("captured V:", values.shape)

print("\n== replace the last block's aggregation (here: uniform averaging on a 3x3 grid)")


def mean_aggregator(v, block_input):
    patches = resample_token_rows(v, (2, 2), (3, 3))[1:]
    pooled = uniform_affinity(9).astype(np.float64) @ patches.astype(np.float64)
    agg = np.concatenate([v[:1], pooled.astype(np.float32)])
    return agg, (3, 3)


replaced, _ = forward(x0, blocks, last_block_mode="replaced", aggregator=mean_aggregator)
print("tokens after replacement:", replaced.tokens.shape, "grid:", (replaced.grid_h, replaced.grid_w))
