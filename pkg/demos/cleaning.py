# Zero accounting and the cleaning policy on a small synthetic sensor frame.
import numpy as np

from fern import dataio

rng = np.random.default_rng(0)
n = 2000
ok = rng.normal(5.0, 1.0, n)
spiky = ok.copy()
spiky[rng.choice(n, 40, replace=False)] = 0.0        # isolated dropouts
spiky[600:603] = 0.0                                  # a short outage
outage = ok.copy()
outage[1000:1010] = 0.0                                # a long outage (10 h)
dead = ok.copy()
dead[:400] = 0.0                                       # 20% zeros: unusable
frame = dataio.SeriesFrame(["ok", "spiky", "outage", "dead"],
                           np.column_stack([ok, spiky, outage, dead]))

for r in dataio.zero_report(frame):
    print(f"{r.column:<8} {r.total:>4} zeros {r.percent:6.2f}%  isolated {r.isolated:>3}"
          f"  clustered {r.clustered:>3}  longest {r.longest_run}")

clean, actions = dataio.apply_policy(frame, dataio.Policy(sampling_interval=3600.0))
for a in actions:
    print(" ", a)
print("kept", clean.columns, "rows", clean.rows)

# windows are cut inside each split and channels stack along the batch axis
ds = dataio.split_and_window(clean, dataio.SplitSpec(ratios=(0.6, 0.2, 0.2), input_len=96,
                                                     horizon=48))
print("train/val/test windows", len(ds.train), len(ds.val), len(ds.test))
