# Simulating the benchmark systems and the three kinds of regime shock.
import numpy as np

from fern import generators as gen

# A parameter shock on Lorenz: rho jumps at 70% of the trajectory.
traj = gen.generate("LORENZ_PARAM", steps=4000)
k = traj.shock_index
print("rows", traj.values.shape, "shock at", k)
print("shock record", traj.shock_record())

# the attractor moves, so the per-window spread changes across the shock
before, after = traj.values[k - 500:k], traj.values[k:k + 500]
print("std before", before.std(axis=0).round(2))
print("std after ", after.std(axis=0).round(2))

# state shocks kick every coordinate once, switch shocks swap the whole system
for name in ["LORENZ_STATE", "LORENZ_SWITCH", "SLDS_SWITCH"]:
    t = gen.generate(name, steps=2000)
    jump = np.abs(np.diff(t.values, axis=0)).max(axis=1)
    k = t.shock_index
    print(f"{name:<14} index {k}  step at shock {jump[k - 1]:.3f}  median step {np.median(jump):.3f}")

# every scenario is reproducible from its seed
a = gen.generate("GARCH_PARAM", steps=500).values
b = gen.generate("GARCH_PARAM", steps=500).values
print("GARCH rerun identical:", np.array_equal(a, b))
