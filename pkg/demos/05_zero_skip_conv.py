# %% [markdown]
# # Zero-skipping convolution
# Each non-zero input is scattered into every output it touches. Zeros cost nothing.
# The result is compared bit for bit against a dense sliding-window oracle.

# %%
import numpy as np

from dvs_nullhop import ConvLayerConfig, conv_dense_oracle, conv_zero_skip, encode

rng = np.random.default_rng(4)
cfg = ConvLayerConfig(3, 4, 8, rng.integers(-64, 64, (8, 4, 3, 3)), relu=False)
for density in (0.9, 0.5, 0.1):
    x = rng.integers(-256, 256, (4, 64, 64)).astype(np.int32)
    x[rng.random(x.shape) >= density] = 0
    out, stats = conv_zero_skip(encode(x), cfg)
    same = np.array_equal(out, conv_dense_oracle(x, cfg))
    print(f"density {density}: exact={same} macs {stats.macs_performed}/{stats.macs_dense_equivalent} "
          f"saved {stats.savings_ratio:.1%}")

# %% [markdown]
# A small gesture-style network: five conv layers with pooling and a 4-way classifier.

# %%
from dvs_nullhop.nullhop import network_reference, roshambo_network, run_network

net = roshambo_network(seed=7)
frame = np.zeros((1, 64, 64), np.int32)
frame[0, 20:44, 28:36] = 200
scores, per_layer = run_network(encode(frame), net)
print("scores:", scores, "reference agrees:", np.array_equal(scores, network_reference(frame, net)))
for i, s in enumerate(per_layer):
    print(f"layer {i}: skipped {s.savings_ratio:.1%} of MACs")
