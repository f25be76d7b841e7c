"""Post-training analysis: TPAVI attention heatmaps and audio-embedding clustering."""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, ConfigDict
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE

from prefect_avs.audio.spectrogram import SpectrogramConfig
from prefect_avs.core.types import AudibleSample
from prefect_avs.data.loader import AVSDataset
from prefect_avs.engine.checkpoint import Checkpoint
from prefect_avs.errors import FusionAbsentError, TooFewSamplesError
from prefect_avs.model.avs import AVSModel
from prefect_avs.model.decoder import activate
from prefect_avs.model.fusion import Tpavi, attention_heatmap
from prefect_avs.objectives.losses import foreground, masked_pooled_features

logger = logging.getLogger(__name__)

clusters_filename = "clusters.tsv"


def _as_model(source: Checkpoint | AVSModel | str | Path) -> tuple[AVSModel, SpectrogramConfig]:
    if isinstance(source, AVSModel):
        return source.eval(), SpectrogramConfig()
    if not isinstance(source, Checkpoint):
        source = Checkpoint.load(source)
    return source.build_model(), source.config.spectrogram


def _single_batch(sample: AudibleSample, spectrogram: SpectrogramConfig, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    item = AVSDataset([sample], spectrogram)[0]
    return item["frames"][None].to(dtype), item["logmel"][None].to(dtype)


@torch.no_grad()
def compute_heatmaps(
    source: Checkpoint | AVSModel | str | Path,
    sample: AudibleSample,
    stage: int,
) -> torch.Tensor:
    """
    (T, H, W) per-frame attention heatmaps of one TPAVI stage, each in [0, 1].

    :raises FusionAbsentError: the stage has no TPAVI block
    """
    model, spectrogram = _as_model(source)
    if stage not in (1, 2, 3, 4) or not isinstance(model.fusions[stage - 1], Tpavi):
        logger.error("Stage %s of this model has no TPAVI block", stage)
        raise FusionAbsentError(f"stage {stage} has no TPAVI block to read attention from")

    dtype = next(model.parameters()).dtype
    frames, logmel = _single_batch(sample, spectrogram, dtype)
    output = model(frames, logmel, return_attention=True)
    height, width = output.fused[stage - 1].shape[-2:]
    return attention_heatmap(
        output.attention[stage][0],
        frames.shape[1],
        height,
        width,
        tuple(frames.shape[-2:]),
    )


def export_heatmaps(
    source: Checkpoint | AVSModel | str | Path,
    sample: AudibleSample,
    stage: int,
    out_dir: str | Path,
) -> list[Path]:
    """Write `<out_dir>/<video_id>/stage<i>_<t>.png` grayscale heatmaps, one per frame."""
    maps = compute_heatmaps(source, sample, stage)
    directory = Path(out_dir) / sample.video_id
    directory.mkdir(parents=True, exist_ok=True)

    paths = []
    for t, heatmap in enumerate(maps.cpu().numpy()):
        path = directory / f"stage{stage}_{t}.png"
        Image.fromarray(np.round(heatmap * 255.0).astype(np.uint8)).save(path)
        paths.append(path)
    logger.info("Wrote %d stage-%d heatmaps for %s to %s", len(paths), stage, sample.video_id, directory)
    return paths


class ClusterResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    keys: list[tuple[str, int]]
    labels: np.ndarray
    coordinates: np.ndarray

    def dump(self, path: str | Path) -> Path:
        """`video_id t label x y` rows, tab separated."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for (video_id, t), label, (x, y) in zip(self.keys, self.labels, self.coordinates):
                f.write(f"{video_id}\t{t}\t{int(label)}\t{x:.6f}\t{y:.6f}\n")
        logger.info("Wrote %d cluster assignments to %s", len(self.keys), path)
        return path


@torch.no_grad()
def collect_audio_embeddings(
    source: Checkpoint | AVSModel | str | Path,
    samples: Sequence[AudibleSample],
) -> tuple[list[tuple[str, int]], np.ndarray]:
    """One row of A per clip, keyed by (video_id, t)."""
    model, spectrogram = _as_model(source)
    dtype = next(model.parameters()).dtype
    keys, rows = [], []
    for sample in samples:
        _, logmel = _single_batch(sample, spectrogram, dtype)
        rows.append(model.audio_encoder(logmel)[0].double().cpu().numpy())
        keys.extend((sample.video_id, t) for t in range(sample.num_clips))
    return keys, np.concatenate(rows) if rows else np.empty((0, model.config.audio_dim))


def cluster_embeddings(embeddings: np.ndarray, k: int = 20, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """
    PCA projection, then a seeded K-way K-means partition of the projected rows.

    :return: (labels (n,), 2-D coordinates (n, 2))
    """
    n, dim = embeddings.shape
    if n < max(k, 1):
        logger.error("Cannot form %d clusters from %d embeddings", k, n)
        raise TooFewSamplesError(f"{n} embeddings cannot be partitioned into K={k} clusters")
    if n == 1:
        return np.zeros(1, dtype=np.int64), np.zeros((1, 2))

    components = min(n, dim, max(2, k))
    projected = PCA(n_components=components, random_state=seed).fit_transform(embeddings)
    labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(projected)

    coordinates = np.zeros((n, 2))
    coordinates[:, : min(2, components)] = projected[:, :2]
    return labels, coordinates


def cluster_audio_embeddings(
    source: Checkpoint | AVSModel | str | Path,
    samples: Sequence[AudibleSample],
    k: int = 20,
    seed: int = 0,
    out_dir: Optional[str | Path] = None,
) -> ClusterResult:
    """
    Partition the audio embeddings of every clip of `samples` into `k` groups.

    :param out_dir: when given, the assignments are written to `clusters.tsv` there
    """
    keys, embeddings = collect_audio_embeddings(source, samples)
    labels, coordinates = cluster_embeddings(embeddings, k, seed)
    result = ClusterResult(keys=keys, labels=labels, coordinates=coordinates)
    logger.info("Clustered %d audio embeddings into %d groups", len(keys), k)
    if out_dir is not None:
        result.dump(Path(out_dir) / clusters_filename)
    return result


@torch.no_grad()
def project_visual_features(
    source: Checkpoint | AVSModel | str | Path,
    samples: Sequence[AudibleSample],
    stage: int = 4,
    seed: int = 0,
) -> np.ndarray:
    """
    t-SNE of the mask-weighted, pooled fused features of one stage, one 2-D
    point per clip in the same order as `collect_audio_embeddings`. Coloring
    the points by audio cluster shows how well visual features follow sound.
    """
    model, spectrogram = _as_model(source)
    dtype = next(model.parameters()).dtype
    rows = []
    for sample in samples:
        frames, logmel = _single_batch(sample, spectrogram, dtype)
        output = model(frames, logmel)
        probabilities, _ = activate(output.scores, model.config.setting)
        pooled = masked_pooled_features(foreground(probabilities.scores), output.fused[stage - 1])
        rows.append(pooled[0].double().cpu().numpy())

    features = np.concatenate(rows)
    if features.shape[0] < 3:
        raise TooFewSamplesError(f"t-SNE needs at least 3 clips, got {features.shape[0]}")
    perplexity = min(30.0, features.shape[0] - 1.0)
    return TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(features)
