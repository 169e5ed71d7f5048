"""
Reference clustering
====================

Raw discrepancy values live on an arbitrary scale.  Reference clustering
turns a value into a machine-probability: find the k-th nearest labeled
reference, count machine vs human references inside that adaptive window,
and report the local ratio.
"""

import numpy as np

from mgtdetect import (
    DDLConfig,
    ToyScoringModel,
    batch_discrepancies,
    build_reference,
    estimate_pm,
    synth_task,
    train,
)

# %%
# Score labeled reference corpora with a trained detector.

data = synth_task(seed=11, v=8, order=1, s=32, count=150)
model = ToyScoringModel.random(1, 8, scale=0.1, seed=2)
trained, _ = train(model, (data.human[:100], data.machine[:100]),
                   DDLConfig(gamma=50.0, epochs=100))

ref_machine = batch_discrepancies(trained, data.machine[100:])
ref_human = batch_discrepancies(trained, data.human[100:])
print(f"reference discrepancies: machine mean {ref_machine.mean():+.2f}, "
      f"human mean {ref_human.mean():+.2f}")

ref = build_reference(ref_machine, ref_human)  # k from the 2% default rule
print(f"reference set of {ref.size} values, window order k={ref.k}")

# %%
# The estimated machine-probability sweeps from 0 to 1 across the gap
# between the two reference clouds.

lo = float(min(ref_human.min(), ref_machine.min()))
hi = float(max(ref_human.max(), ref_machine.max()))
for d in np.linspace(lo, hi, 9):
    pm = estimate_pm(ref, float(d))
    bar = "#" * int(round(pm * 30))
    print(f"d = {d:+8.2f}   p_machine = {pm:4.2f}  |{bar:<30s}|")

# %%
# Fresh texts scored end to end.

probe_machine = batch_discrepancies(trained, data.machine[:5])
probe_human = batch_discrepancies(trained, data.human[:5])
print("machine probes:", [round(estimate_pm(ref, float(d)), 2) for d in probe_machine])
print("human probes:  ", [round(estimate_pm(ref, float(d)), 2) for d in probe_human])
