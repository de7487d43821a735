# %% [markdown]
# # Sparsity map plus non-zero value list
# One bit per element marks non-zeros; only those values are stored.

# %%
import numpy as np

from dvs_nullhop import compression_ratio, decode, encode, iter_nonzero

t = np.zeros((2, 3, 5), np.int32)
t[0, 1, 2] = 7
t[1, 2, 4] = -3
c = encode(t)
print("sm words:", [hex(int(w)) for w in c.sm], "nzvl:", c.nzvl.tolist())
print("walk:", list(iter_nonzero(c)))
assert np.array_equal(decode(c), t)

# %% [markdown]
# Compression pays off once roughly 3% of entries are zero (32-bit values, 1-bit map).

# %%
rng = np.random.default_rng(3)
for density in (1.0, 0.9, 0.5, 0.1, 0.0):
    x = rng.integers(1, 100, (8, 64, 64)).astype(np.int32)
    x[rng.random(x.shape) >= density] = 0
    print(f"density {density:.1f}: ratio {compression_ratio(encode(x)):.2f}")
