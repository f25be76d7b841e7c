import json
import logging
import math
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader

from prefect_avs.audio.spectrogram import SpectrogramConfig
from prefect_avs.core.palette import Palette, encode_semantic_mask
from prefect_avs.core.types import AudibleSample, TaskSetting
from prefect_avs.data.loader import AVSDataset
from prefect_avs.engine.checkpoint import Checkpoint, transfer_init
from prefect_avs.engine.config import InitMode, LRSchedule, TrainConfig, config_snapshot_filename, dump_config
from prefect_avs.errors import ConfigurationError, DivergenceError
from prefect_avs.model.avs import AVSModel, build_model, stage_projections
from prefect_avs.model.decoder import activate
from prefect_avs.objectives.losses import compute_loss
from prefect_avs.objectives.metrics import MetricAccumulator, MetricReport

logger = logging.getLogger(__name__)

metrics_log_filename = "metrics.jsonl"
last_checkpoint_filename = "last.pt"
best_checkpoint_filename = "best.pt"


def check_samples(samples: Sequence[AudibleSample], setting: TaskSetting) -> None:
    """Every sample must belong to `setting` (kind and T)."""
    for sample in samples:
        if sample.kind != setting.kind or sample.num_clips != setting.clips_per_video:
            logger.error("Sample %s does not match the %s setting", sample.video_id, setting.kind.value)
            raise ConfigurationError(
                f"sample {sample.video_id} is {sample.kind.value} with T={sample.num_clips}; "
                f"the model expects {setting.kind.value} with T={setting.clips_per_video}"
            )


def _batches(samples: Sequence[AudibleSample], spectrogram: SpectrogramConfig, batch_size: int) -> Iterator[dict]:
    loader = DataLoader(AVSDataset(samples, spectrogram), batch_size=batch_size, shuffle=False)
    yield from loader


@torch.no_grad()
def predict_masks(
    model: AVSModel,
    samples: Sequence[AudibleSample],
    spectrogram: SpectrogramConfig = SpectrogramConfig(),
    batch_size: int = 4,
) -> Iterator[tuple[AudibleSample, np.ndarray]]:
    """Yield every sample with its (T, H, W) hard mask."""
    model.eval()
    dtype = next(model.parameters()).dtype
    offset = 0
    for batch in _batches(samples, spectrogram, batch_size):
        output = model(batch["frames"].to(dtype), batch["logmel"].to(dtype))
        _, hard = activate(output.scores, model.config.setting)
        for masks in hard.cpu().numpy():
            yield samples[offset], masks
            offset += 1


def evaluate_model(
    model: AVSModel,
    samples: Sequence[AudibleSample],
    spectrogram: SpectrogramConfig = SpectrogramConfig(),
    batch_size: int = 4,
) -> MetricReport:
    """mIoU and F-score over every annotated frame of `samples`."""
    setting = model.config.setting
    check_samples(samples, setting)
    accumulator = MetricAccumulator(setting.num_classes)
    for sample, masks in predict_masks(model, samples, spectrogram, batch_size):
        if sample.gt_masks is None:
            raise ConfigurationError(f"sample {sample.video_id} has no ground truth to evaluate against")
        supervised = np.asarray(sample.supervised_frames, dtype=bool)
        accumulator.update(masks[supervised], np.asarray(sample.gt_masks)[supervised])
    return accumulator.report()


def evaluate(checkpoint: Checkpoint | str | Path, samples: Sequence[AudibleSample], batch_size: int = 4) -> MetricReport:
    """
    :param checkpoint: a loaded checkpoint or its path
    :param samples: validation or test samples of the checkpoint's setting
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    report = evaluate_model(checkpoint.build_model(), samples, checkpoint.config.spectrogram, batch_size)
    logger.info("Evaluated %d videos: mIoU %.4f, F %.4f", report.num_videos, report.miou, report.f_score)
    return report


def predict(
    checkpoint: Checkpoint | str | Path,
    samples: Sequence[AudibleSample],
    out_dir: str | Path,
    palette: Palette,
    batch_size: int = 4,
) -> list[Path]:
    """Write `<out_dir>/<video_id>/<t>.png` palette-encoded hard masks; returns the written directories."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    model = checkpoint.build_model()
    check_samples(samples, model.config.setting)

    written = []
    for sample, masks in predict_masks(model, samples, checkpoint.config.spectrogram, batch_size):
        directory = Path(out_dir) / sample.video_id
        directory.mkdir(parents=True, exist_ok=True)
        for t, image in enumerate(encode_semantic_mask(masks, palette)):
            image.save(directory / f"{t}.png")
        written.append(directory)
    logger.info("Wrote predicted masks for %d videos to %s", len(written), out_dir)
    return written


def _step_loss(model: AVSModel, batch: dict, config: TrainConfig, setting: TaskSetting):
    dtype = next(model.parameters()).dtype
    output = model(batch["frames"].to(dtype), batch["logmel"].to(dtype))
    probabilities, _ = activate(output.scores, setting)
    return compute_loss(
        probabilities.scores,
        batch["masks"],
        batch["supervised"],
        setting,
        config.loss,
        fused=output.fused,
        audio=output.audio,
        projections=stage_projections(model),
    )


def train(
    config: TrainConfig,
    setting: TaskSetting,
    train_samples: Sequence[AudibleSample],
    valid_samples: Optional[Sequence[AudibleSample]] = None,
    run_dir: Optional[str | Path] = None,
) -> Checkpoint:
    """
    Train a model from scratch or from a transferred checkpoint.

    Batches are drawn in an order fixed by `config.seed` and parameter
    updates are strictly sequential, so two runs with the same seed produce
    identical checkpoints. With a `run_dir`, the resolved configuration goes
    to `config.yaml`, one JSON line per epoch to `metrics.jsonl`, and the
    last and best-validation-mIoU checkpoints to `last.pt` / `best.pt`.

    :param setting: the dataset's setting; `config.setting`, if given, must match
    :return: the checkpoint after the final epoch
    """
    setting = config.resolve_setting(setting)
    check_samples(train_samples, setting)
    if valid_samples:
        check_samples(valid_samples, setting)

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        dump_config(config, run_dir / config_snapshot_filename)
        (run_dir / metrics_log_filename).write_text("")

    model = build_model(config.model_for(setting), seed=config.seed)
    if config.init == InitMode.FROM_CHECKPOINT:
        transfer_init(model, config.checkpoint)

    optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=config.lr)
    epochs = config.epochs_for(setting)
    scheduler = None
    if config.schedule == LRSchedule.COSINE:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=epochs)

    dataset = AVSDataset(train_samples, config.spectrogram, flip=config.flip, seed=config.seed)
    loader = DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
    )
    micro = config.micro_batch_size or config.batch_size

    logger.info(
        "Training %s (fusion=%s, λ=%s %s) for %d epochs on %d videos",
        setting.kind.value,
        config.fusion.value,
        config.loss.weight_for(setting),
        config.loss.avm_variant.value,
        epochs,
        len(dataset),
    )

    history: list[dict] = []
    best_miou = -math.inf
    checkpoint = Checkpoint.from_model(model, config, epoch=0)
    for epoch in range(1, epochs + 1):
        dataset.set_epoch(epoch)
        model.train()
        totals = {"loss": 0.0, "main": 0.0, "avm": 0.0}
        steps = 0

        for batch in loader:
            optimizer.zero_grad(set_to_none=True)
            size = batch["frames"].shape[0]
            for start in range(0, size, micro):
                chunk = {key: value[start:start + micro] for key, value in batch.items()}
                terms = _step_loss(model, chunk, config, setting)
                if not torch.isfinite(terms.total):
                    logger.error("Non-finite loss at epoch %d, step %d", epoch, steps)
                    raise DivergenceError(f"loss became non-finite at epoch {epoch}, step {steps}")
                weight = chunk["frames"].shape[0] / size
                (terms.total * weight).backward()
                totals["loss"] += terms.total.item() * weight
                totals["main"] += terms.main.item() * weight
                if terms.avm is not None:
                    totals["avm"] += terms.avm.item() * weight
            optimizer.step()
            steps += 1

        record = {"epoch": epoch, "lr": optimizer.param_groups[0]["lr"]}
        record.update({key: value / max(steps, 1) for key, value in totals.items()})
        if scheduler is not None:
            scheduler.step()

        if valid_samples:
            report = evaluate_model(model, valid_samples, config.spectrogram, config.batch_size)
            record.update(val_miou=report.miou, val_f_score=report.f_score)
        history.append(record)
        logger.info(
            "Epoch %d/%d: loss %.4f%s",
            epoch,
            epochs,
            record["loss"],
            f", val mIoU {record['val_miou']:.4f}, F {record['val_f_score']:.4f}" if valid_samples else "",
        )

        checkpoint = Checkpoint.from_model(model, config, epoch=epoch, history=history)
        if run_dir is not None:
            with open(run_dir / metrics_log_filename, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
            checkpoint.save(run_dir / last_checkpoint_filename)
            if valid_samples and record["val_miou"] > best_miou:
                best_miou = record["val_miou"]
                checkpoint.save(run_dir / best_checkpoint_filename)

    return checkpoint
