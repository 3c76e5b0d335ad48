"""Tour of the shared float32 numerics.

Run: python3 demos/01_dense_numerics.py
"""

import numpy as np

from douc import bilinear_resize, l2_normalize_rows, layer_norm, matmul, row_softmax

rng = np.random.default_rng(0)

print("== matrix product (f32 storage, f64 accumulation)")
a = rng.standard_normal((2, 3)).astype(np.float32)
b = rng.standard_normal((3, 2)).astype(np.float32)
print(matmul(a, b))

print("\n== stable row softmax: a -1e4 sentinel underflows to an exact zero")
scores = np.array([[1.0, -1e4, 0.5]], dtype=np.float32)
probs = row_softmax(scores, scale=2.0)
print(probs, "row sum:", probs.sum())

print("\n== l2 row normalization (zero rows pass through)")
m = np.array([[3.0, 4.0], [0.0, 0.0]], dtype=np.float32)
print(l2_normalize_rows(m))

print("\n== layer normalization: a constant row maps to beta")
row = np.full((1, 4), 7.0, dtype=np.float32)
gamma = np.ones(4, dtype=np.float32)
beta = np.array([0.1, 0.2, 0.3, 0.4], dtype=np.float32)
print(layer_norm(row, gamma, beta))

print("\n== bilinear resize with half-pixel centers")
grid = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)[..., None]
up = bilinear_resize(grid, 4, 4)[..., 0]
print(up)
print("value range preserved:", up.min() >= 0.0 and up.max() <= 3.0)
