# %% [markdown]
# # Sequential versus pipelined frame rate
# Software baseline: 4 ms of preprocessing then 6 ms of CNN, one frame at a time.
# Hardware: collection, normalization and CNN overlap across frames.

# %%
from dvs_nullhop import Mode, simulate, speedup
from dvs_nullhop.pipeline import PEAK_RATE_EPS, fpga_stages, software_baseline_stages

seq = simulate(software_baseline_stages(), 50, Mode.SEQUENTIAL)
pip = simulate(fpga_stages(), 50, Mode.PIPELINED, event_rate_eps=PEAK_RATE_EPS)
print(f"sequential: {seq.fps:.0f} fps   pipelined: {pip.fps:.0f} fps   speedup {speedup(seq, pip):.3f}")
print("binding stage:", pip.binding_stage, " latency:", pip.latency * 1e3, "ms")

# %% [markdown]
# At 333k events/s collection and CNN both take 6 ms. Slower sensors leave the CNN idle.

# %%
for rate in (PEAK_RATE_EPS, 200e3, 100e3):
    t = simulate(fpga_stages(), 50, Mode.PIPELINED, event_rate_eps=rate)
    print(f"{rate / 1e3:6.0f} kev/s -> {t.fps:6.1f} fps, bound by {t.binding_stage}")

# %% [markdown]
# End to end on synthetic events, with the collector on its own thread.

# %%
from dvs_nullhop import DAVIS240, end_to_end, gen_moving_edge
from dvs_nullhop.nullhop import roshambo_network

ev = gen_moving_edge(DAVIS240, 2000, PEAK_RATE_EPS, 30_000, rng_seed=42)
res = end_to_end(ev, roshambo_network(seed=7), threaded=True)
print(res.classifications_csv())
print("MACs skipped overall:", f"{res.mac_stats.savings_ratio:.1%}")
