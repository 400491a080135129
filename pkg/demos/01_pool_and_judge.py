"""
Pool three runs and produce hybrid qrels
========================================

Builds depth-10 pools over the bundled toy collection, splits each pool
into a shallow human portion (best rank <= 3) and a deep automatic
portion, judges both, and writes hybrid qrels.

Run from the repository root:

    python3 demos/01_pool_and_judge.py
"""

from pathlib import Path
import tempfile

from hybridpool.config import ExperimentConfig
from hybridpool.pipeline import cmd_judge, cmd_pool, load_collection, pool_stage

FIXTURE = Path(__file__).resolve().parent.parent / "fixtures" / "toy"

workdir = Path(tempfile.mkdtemp(prefix="hybridpool-demo-"))
config = ExperimentConfig(
    runs_dir=str(FIXTURE / "runs"),
    topics=str(FIXTURE / "topics.tsv"),
    corpus=str(FIXTURE / "corpus.jsonl"),
    gold_qrels=str(FIXTURE / "gold.qrels"),
    output_dir=str(workdir),
    # the faithful mock backend answers straight from the reference qrels,
    # so the demo runs offline and the hybrid set reproduces the reference
    backend="mock:faithful",
    strategy="zero_shot",
    human_mode="simulate",
)
config.validate()

# Inspect the split before judging anything: each topic's pool is the
# union of the top-10 documents across runs, and a document lands in the
# human portion when its best rank in any run is <= k_human.
collection = load_collection(config)
stage = pool_stage(config, collection)
for topic_id, split in sorted(stage.splits.items()):
    print(f"{topic_id}: pool={len(stage.pools[topic_id].members):2d}  "
          f"human={len(split.shallow):2d}  automatic={len(split.deep):2d}")

pool_summary = cmd_pool(config)
print(f"\nexported {len(pool_summary['pool_files'])} pool files, "
      f"{pool_summary['pool_size_total']} pooled pairs total")

judge_summary = cmd_judge(config)
print(f"judged {judge_summary['human_pairs']} human + "
      f"{judge_summary['llm_pairs']} automatic pairs")
print(f"hybrid qrels: {judge_summary['hybrid_qrels']}")
print(f"judgement log: {judge_summary['judgement_log']}")
