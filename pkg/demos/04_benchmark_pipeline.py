"""
Benchmark pipeline
==================

The harness machinery end to end: cleaning rules, disjoint/shared input
sampling, style-controlled prompt rendering, and the evaluation fold that
turns per-record detector scores into a metrics report.
"""

import json

import numpy as np

from mgtdetect import (
    BenchRecord,
    Domain,
    Label,
    RunOptions,
    Scenario,
    Task,
    ToyScoringModel,
    dig_sig_sample,
    pre_clean,
    post_clean,
    prompt_render,
    run_eval,
    style_pick,
    synth_task,
)
from mgtdetect.bench import ToyModelSource, report_to_json

# %%
# Cleaning: newline neutralization plus word-count windows (100-200 for
# source texts, 90-220 for generated ones).

sample = " ".join(f"word{i}" for i in range(150)).replace("word9 ", "word9\n")
result = pre_clean(sample)
print("pre-clean accepted:", result.accepted, "| newline survived:", "\n" in result.text)
print("short text rejected:", post_clean("too short").reason)

# %%
# Disjoint-input vs shared-input sampling: each model gets its own source
# texts, one shared pool serves every model, nothing overlaps.

pools = {Domain.NEWS: [f"news-{i}" for i in range(12)], Domain.EMAIL: [f"mail-{i}" for i in range(8)]}
assignment = dig_sig_sample(pools, ["model-a", "model-b"], {Domain.NEWS: 3, Domain.EMAIL: 2}, seed=3)
for model, per_domain in assignment.dig.items():
    print(model, {d.value: v for d, v in per_domain.items()})
print("shared:", {d.value: v for d, v in assignment.sig.items()})

# %%
# Style-controlled prompts for the three generation tasks.

style = style_pick(seed=0, index=42)
print("picked style:", style)
print(prompt_render(Task.GENERATE, style, "The committee convened at dawn"))
print(prompt_render(Task.REWRITE, style, "<original text>")[:80] + "...")

# %%
# Evaluation: toy-backend scores aggregated per (detector, task, scenario).

data = synth_task(seed=5, v=16, order=1, s=32, count=30)
records = []
for i in range(30):
    task = [Task.GENERATE, Task.POLISH, Task.REWRITE][i % 3]
    scenario = Scenario.DIG if i % 2 == 0 else Scenario.SIG
    records.append(BenchRecord(
        id=f"h{i:03d}", text=f"human text {i}", label=Label.HUMAN, task=task,
        domain=Domain.NEWS, scenario=scenario, token_ids=data.human[i].tokens))
    records.append(BenchRecord(
        id=f"m{i:03d}", text=f"machine text {i}", label=Label.MACHINE, task=task,
        domain=Domain.NEWS, scenario=scenario, source_model="toy-lm",
        pair_id=f"h{i:03d}", token_ids=data.machine[i].tokens))

source = ToyModelSource(data.generator)
report = run_eval(records, ["fastdetect", "likelihood"], source,
                  RunOptions(baseline="likelihood"))
for cell in report["cells"]:
    print(f"{cell['detector']:10s} {cell['task']:8s} {cell['scenario']:3s} "
          f"n={cell['n']:2d} AUROC {cell['auroc']:.3f} MCC {cell['mcc']:+.3f}")
print("improvement rows:", len(report["improvement"]))
print("report bytes:", len(report_to_json(report)))
