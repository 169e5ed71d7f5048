"""
Training a detector
===================

Direct-discrepancy training drives the discrepancy of human text toward 0
and of machine text toward the margin, separating the two corpora; the
preference-loss ablation shows how a stronger implicit KL constraint shrinks
the learned margin.
"""

from mgtdetect import (
    DDLConfig,
    DPOConfig,
    ScoredLabelSet,
    ToyScoringModel,
    auroc,
    batch_discrepancies,
    synth_task,
    train,
)

# %%
# Paired synthetic corpora: one generator table, machine text sampled sharp
# (temperature 0.5), human text sampled flat (temperature 1.5).

data = synth_task(seed=7, v=8, order=1, s=32, count=120)
train_pairs = (data.human[:80], data.machine[:80])
hold_h, hold_m = data.human[80:], data.machine[80:]


def holdout_auroc(model):
    d_m = batch_discrepancies(model, hold_m)
    d_h = batch_discrepancies(model, hold_h)
    return auroc(ScoredLabelSet.from_scores(d_m, d_h))


model = ToyScoringModel.random(1, 8, scale=0.1, seed=1)
print("held-out AUROC before training:", round(holdout_auroc(model), 4))

# %%
# Train with the direct objective and watch the margin open up.

trained, trace = train(model, train_pairs, DDLConfig(gamma=50.0, epochs=120))
for rec in trace.records[:: len(trace) // 6]:
    print(f"epoch {rec.epoch:3d}  d_human {rec.mean_d_human:+7.3f}"
          f"  d_machine {rec.mean_d_machine:+7.3f}  loss {rec.loss:8.3f}")
print("held-out AUROC after training:", round(holdout_auroc(trained), 4))

# %%
# The margin target is uncritical once large enough: a sweep over it lands
# on the same detector quality.

for gamma in (20.0, 50.0, 500.0):
    t, _ = train(model, train_pairs, DDLConfig(gamma=gamma, epochs=120))
    print(f"gamma {gamma:6.0f} -> held-out AUROC {holdout_auroc(t):.4f}")

# %%
# Preference-loss ablation: raising the implicit KL strength beta pins the
# model to its initialization and collapses the learned margin.

for beta in (0.05, 0.5, 0.95):
    _, tr = train(model, train_pairs, DPOConfig(beta=beta, epochs=120))
    print(f"beta {beta:4.2f} -> final margin delta_d {tr.records[-1].delta_d:6.3f}")

# %%
# Optional: plot the training trace.

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in trace.records]
    plt.plot(epochs, [r.mean_d_human for r in trace.records], label="mean d (human)")
    plt.plot(epochs, [r.mean_d_machine for r in trace.records], label="mean d (machine)")
    plt.xlabel("epoch")
    plt.ylabel("discrepancy")
    plt.legend()
    plt.tight_layout()
    plt.savefig("training_trace.png", dpi=120)
    print("trace plot -> training_trace.png")
except ImportError:
    pass
