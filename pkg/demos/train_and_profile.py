# Train a small model on a shocked Lorenz series and export its eigen profile.
import tempfile
from pathlib import Path

import numpy as np

from fern import dataio, diagnostics, generators, training
from fern.model import Fern, FernConfig

traj = generators.generate("LORENZ_PARAM", steps=3000)
frame = dataio.from_trajectory(traj)
ds = dataio.split_and_window(frame, dataio.SplitSpec(ratios=(0.7, 0.2, 0.1), input_len=48,
                                                     horizon=24), name="LORENZ_PARAM")

model = Fern(FernConfig(input_len=48, horizon=24, patch=6, reflections=3, hidden=16), seed=7)
cfg = training.protocol_config("shock", epochs=4, batch_size=256, grace=1)
rec, _ = training.train(model, ds, cfg)
for e in rec.epochs:
    print(f"epoch {e.epoch}  train {e.train_loss:.4f}  val {e.val_objective:.4f}"
          + ("" if e.eligible else "  (grace)"))
print("best epoch", rec.best_epoch, "test", {k: round(v, 4) for k, v in rec.test.items()
                                              if isinstance(v, float)})

for kind in ["mean", "persistence", "ridge"]:
    pred = training.baseline_predict(kind, ds, ds.test)
    print(f"{kind:<12} mse {training.score(pred, ds.test, ds, 0).mse:.4f}")

# per-patch spectra next to per-patch error, one row per (window, patch)
pred, factors = model.predict(ds.test.x, return_factors=True)
prof = diagnostics.eigen_profile(factors, ds.test.offset, ds.test.channel)
out = Path(tempfile.mkdtemp()) / "profile.csv"
diagnostics.export_profile(prof, np.abs(pred - ds.test.y), out)
table = diagnostics.profile_table(prof, np.abs(pred - ds.test.y))
print(table.head())
print("corr(logdet, log error):",
      np.corrcoef(table["logdet"], table["log_abs_error"])[0, 1].round(3))
