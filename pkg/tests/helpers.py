"""Shared builders for random model pieces used across test modules."""

import numpy as np

from douc.vit import BlockWeights, TokenSequence


def random_block(rng, v=8, heads=2, hidden=None, zero_bias=False):
    hidden = hidden or 4 * v
    scale = 0.5 / np.sqrt(v)

    def w(rows, cols):
        return (rng.standard_normal((rows, cols)) * scale).astype(np.float32)

    def b(n):
        if zero_bias:
            return np.zeros(n, dtype=np.float32)
        return (rng.standard_normal(n) * 0.02).astype(np.float32)

    return BlockWeights(
        ln1_gamma=rng.uniform(0.8, 1.2, v).astype(np.float32),
        ln1_beta=(rng.standard_normal(v) * 0.05).astype(np.float32),
        w_q=w(v, v),
        w_k=w(v, v),
        w_v=w(v, v),
        w_out=w(v, v),
        b_q=b(v),
        b_k=b(v),
        b_v=b(v),
        b_out=b(v),
        ln2_gamma=rng.uniform(0.8, 1.2, v).astype(np.float32),
        ln2_beta=(rng.standard_normal(v) * 0.05).astype(np.float32),
        ffn_w1=w(v, hidden),
        ffn_b1=b(hidden),
        ffn_w2=w(hidden, v),
        ffn_b2=b(v),
        head_count=heads,
    )


def random_tokens(rng, grid_h=2, grid_w=2, v=8):
    toks = rng.standard_normal((grid_h * grid_w + 1, v)).astype(np.float32)
    return TokenSequence(toks, grid_h, grid_w)
