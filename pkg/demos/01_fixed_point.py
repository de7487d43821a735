# %% [markdown]
# # Q-format arithmetic
# Internal math runs in Q24.16; frames leave the normalizer as Q16.8.
# Rounding is to nearest with ties to even, and overflow saturates with a sticky flag.

# %%
from dvs_nullhop import Q16_8, Q24_16, from_real, q_div, q_mul, q_sqrt
from dvs_nullhop.fixed_point import q_convert

a = from_real(3.25, Q24_16)
b = from_real(-1.5, Q24_16)
print("a*b =", (a * b).to_real(), " a/b =", q_div(a, b).to_real())

# %%
root2 = q_sqrt(from_real(2.0, Q24_16))
print("sqrt(2) in Q24.16:", root2.to_real(), "raw", root2.raw)

# %% [markdown]
# Saturation is sticky: once a value clips, everything derived from it keeps the flag.

# %%
big = from_real(2.0 ** 23, Q24_16)
prod = q_mul(big, big)
print("saturated:", prod.saturated, "value:", prod.to_real())
print("after narrowing:", q_convert(prod, Q16_8).saturated)
