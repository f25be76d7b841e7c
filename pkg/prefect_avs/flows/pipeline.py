"""
Prefect flows tying corpus synthesis, training and evaluation together, plus
the multi-seed ablation sweeps that compare configurations by mean
validation mIoU.
"""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

from prefect import flow, task

from prefect_avs.data.loader import load_split
from prefect_avs.data.manifest import Split, Subset, manifest_filename
from prefect_avs.data.synth import SynthConfig, generate_synthetic
from prefect_avs.engine.checkpoint import Checkpoint
from prefect_avs.engine.config import load_config
from prefect_avs.engine.trainer import evaluate, last_checkpoint_filename, train

logger = logging.getLogger(__name__)

fusion_arms = {"tpavi": ["fusion=tpavi"], "no_fusion": ["fusion=none"]}
avm_arms = {"avm_av": ["loss.lam=0.5", "loss.avm_variant=AV"], "no_avm": ["loss.lam=0"]}


@task
def synthesize(root: str, subset: str, seed: int = 0, overrides: Optional[dict] = None) -> str:
    """Generate the corpus unless `<root>/<subset>/manifest.tsv` already exists."""
    if (Path(root) / Subset(subset).value / manifest_filename).exists():
        logger.info("Reusing corpus at %s/%s", root, subset)
        return root
    generate_synthetic(SynthConfig.model_validate({**(overrides or {}), "subset": subset, "seed": seed}), root)
    return root


@task
def train_run(
    root: str,
    subset: str,
    run_dir: str,
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> dict:
    """Train on the train split, validate every epoch; returns the last epoch's record."""
    config = load_config(config_path, overrides)
    setting, train_samples = load_split(root, subset, Split.TRAIN)
    _, valid_samples = load_split(root, subset, Split.VALID)
    checkpoint = train(config, setting, train_samples, valid_samples, run_dir)
    return checkpoint.history[-1]


@task
def evaluate_run(root: str, subset: str, checkpoint_path: str, split: str = "test") -> dict:
    _, samples = load_split(root, subset, split)
    return evaluate(Checkpoint.load(checkpoint_path), samples).to_flat()


@flow(name="avs-pipeline")
def avs_pipeline(
    root: str,
    run_dir: str,
    subset: str = "multi_source",
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
    synth_seed: int = 0,
) -> dict:
    """Synthesize (if needed), train, and evaluate the last checkpoint on the test split."""
    synthesize(root, subset, synth_seed)
    train_run(root, subset, run_dir, config_path, list(overrides))
    return evaluate_run(root, subset, str(Path(run_dir) / last_checkpoint_filename))


def summarize_arms(results: dict[str, list[float]]) -> dict[str, float]:
    """Mean validation mIoU per arm."""
    return {arm: math.fsum(values) / len(values) for arm, values in results.items()}


@flow(name="avs-ablation-sweep")
def ablation_sweep(
    root: str,
    out_dir: str,
    arms: Optional[dict[str, list[str]]] = None,
    subset: str = "multi_source",
    seeds: Sequence[int] = (0, 1, 2),
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> dict[str, float]:
    """
    Train every arm once per seed and compare arms by mean final validation mIoU.

    :param arms: arm name -> config overrides layered over `overrides`;
        defaults to TPAVI against no fusion
    """
    arms = arms or fusion_arms
    synthesize(root, subset)

    results: dict[str, list[float]] = {}
    for arm, arm_overrides in arms.items():
        for seed in seeds:
            run_dir = str(Path(out_dir) / arm / f"seed{seed}")
            record = train_run(root, subset, run_dir, config_path, [*overrides, *arm_overrides, f"seed={seed}"])
            results.setdefault(arm, []).append(record["val_miou"])

    summary = summarize_arms(results)
    for arm, value in summary.items():
        logger.info("Arm %s: mean validation mIoU %.4f over %d seed(s)", arm, value, len(seeds))
    return summary


@flow(name="avs-transfer-sweep")
def transfer_sweep(
    root: str,
    out_dir: str,
    seeds: Sequence[int] = (0, 1, 2),
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> dict[str, float]:
    """
    Multi-source training from scratch against training initialized from a
    single-source checkpoint of the same seed.
    """
    synthesize(root, Subset.SINGLE_SOURCE.value)
    synthesize(root, Subset.MULTI_SOURCE.value)

    results: dict[str, list[float]] = {"scratch": [], "transfer": []}
    for seed in seeds:
        seed_dir = Path(out_dir) / f"seed{seed}"
        base = [*overrides, f"seed={seed}"]
        train_run(root, Subset.SINGLE_SOURCE.value, str(seed_dir / "pretrain"), config_path, base)

        scratch = train_run(root, Subset.MULTI_SOURCE.value, str(seed_dir / "scratch"), config_path, base)
        transfer = train_run(
            root,
            Subset.MULTI_SOURCE.value,
            str(seed_dir / "transfer"),
            config_path,
            [*base, "init=from_checkpoint", f"checkpoint={seed_dir / 'pretrain' / last_checkpoint_filename}"],
        )
        results["scratch"].append(scratch["val_miou"])
        results["transfer"].append(transfer["val_miou"])

    summary = summarize_arms(results)
    logger.info("Transfer sweep: scratch %.4f, transfer %.4f", summary["scratch"], summary["transfer"])
    return summary
