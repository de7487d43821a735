# %% [markdown]
# # From address events to count frames
# A synthetic bar sweeps across a 240x180 sensor. Every 2000 events close one 64x64 frame.

# %%
import numpy as np

from dvs_nullhop import DAVIS240, DoubleBuffer, collect_frames, gen_moving_edge

events = gen_moving_edge(DAVIS240, 2000.0, 2000 / 6e-3, 30_000, rng_seed=1)
print(len(events), "events; first:", events[0])

frames = list(collect_frames(events, k_events=2000))
for f in frames:
    print(f"frame {f.frame_seq}: {int(f.counts.sum())} events, {int(f.nz_mask.sum())} active pixels, max {f.counts.max()}")

# %% [markdown]
# The double buffer hands a full frame to the consumer while the other buffer keeps filling.
# If the consumer never releases, the collector stalls and drops events.

# %%
db = DoubleBuffer(k_events=500)
done = []
for ev in events[:3000]:
    full = db.accumulate(ev)
    if full is not None:
        db.claim(full)
        done.append(full)  # never released
print("frames claimed:", len(done), "stalled events:", db.stalled_events)

# %%
ascii_art = np.where(frames[2].counts[::4, ::2] > 0, "#", ".")
print("\n".join("".join(r) for r in ascii_art))
