"""
Fidelity and decision preservation under a noisy judge
======================================================

Judges the deep pool portion twice -- once with a faithful mock backend,
once with one that flips 30% of its answers -- and compares what the
noise does to label fidelity (per-topic F1, MCC) and to the significance
decisions between runs (decision-preservation MCC).

Run from the repository root:

    python3 demos/02_fidelity_under_noise.py
"""

import dataclasses
from pathlib import Path
import tempfile

from hybridpool.config import ExperimentConfig
from hybridpool.pipeline import cmd_evaluate, cmd_judge

FIXTURE = Path(__file__).resolve().parent.parent / "fixtures" / "toy"

base = ExperimentConfig(
    runs_dir=str(FIXTURE / "runs"),
    topics=str(FIXTURE / "topics.tsv"),
    corpus=str(FIXTURE / "corpus.jsonl"),
    gold_qrels=str(FIXTURE / "gold.qrels"),
    output_dir="",  # filled per variant below
    backend="mock:faithful",
    strategy="zero_shot",
    human_mode="simulate",
    # with only five topics the smallest achievable adjusted p is 0.09375,
    # so test at alpha=0.1 to leave significant pairs worth preserving
    alpha=0.1,
)

for backend in ("mock:faithful", "mock:noisy:0.3"):
    workdir = Path(tempfile.mkdtemp(prefix="hybridpool-demo-"))
    config = dataclasses.replace(base, backend=backend, output_dir=str(workdir))
    config.validate()

    cmd_judge(config)
    records = cmd_evaluate(config)

    fidelity = {r["topic_id"]: r["value"] for r in records
                if r["section"] == "fidelity" and r["measure"] == "f1"}
    preservation = {r["measure"]: r["value"] for r in records
                    if r["section"] == "preservation"}
    decisions = [(r["run_a"], r["run_b"], r["decision"]) for r in records
                 if r["section"] == "significance" and r["qrels"] == "b"]

    print(f"\nbackend = {backend}")
    print(f"  mean per-topic F1:    {fidelity['all']:.4f}")
    print(f"  preservation 3-class: {preservation['mcc_3class']:.4f}")
    print(f"  preservation binary:  {preservation['mcc_binary']:.4f}")
    for run_a, run_b, decision in decisions:
        print(f"  {run_a} vs {run_b}: {decision}")
