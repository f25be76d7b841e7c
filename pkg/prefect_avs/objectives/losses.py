import logging
from enum import Enum
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from prefect_avs.core.types import SettingKind, TaskSetting
from prefect_avs.errors import DimensionMismatchError, NoSupervisionError, PairingPoolTooSmallError

logger = logging.getLogger(__name__)


class AvmVariant(str, Enum):
    NONE = "none"
    AV = "AV"
    VV = "VV"


class PairingPool(str, Enum):
    VIDEO = "video"
    BATCH = "batch"


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lam: float = Field(0.5, ge=0.0, description="λ, weight of the audio-visual mapping term")
    avm_variant: AvmVariant = Field(AvmVariant.AV, description="Which AVM regularizer to add")
    eps: float = Field(1e-7, gt=0.0, lt=0.5, description="Probabilities are clamped to [ε, 1-ε] before logs")
    vv_pool: PairingPool = Field(PairingPool.VIDEO, description="Where AVM-VV looks for the nearest audio partner")

    def weight_for(self, setting: TaskSetting) -> float:
        """λ actually applied: the semi-supervised single-source setting trains on BCE alone."""
        if setting.kind == SettingKind.S4 or self.avm_variant == AvmVariant.NONE:
            return 0.0
        return self.lam


class LossTerms(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: torch.Tensor
    main: torch.Tensor
    avm: Optional[torch.Tensor] = None


def main_loss(
    probabilities: torch.Tensor,
    gt: torch.Tensor,
    setting: TaskSetting,
    supervised_frames: torch.Tensor,
    eps: float = 1e-7,
) -> torch.Tensor:
    """
    BCE (K = 1) or categorical cross-entropy (K > 1) over supervised frames.

    :param probabilities: activated (..., T, K, H, W) predictions
    :param gt: (..., T, H, W) class ids
    :param supervised_frames: (..., T) booleans; unsupervised frames are
        dropped by indexing and receive exactly zero gradient
    """
    if probabilities.shape[:-3] != gt.shape[:-2] or probabilities.shape[-2:] != gt.shape[-2:]:
        raise DimensionMismatchError(f"prediction {tuple(probabilities.shape)} and gt {tuple(gt.shape)} disagree")

    supervised_frames = supervised_frames.to(torch.bool)
    if not supervised_frames.any():
        raise NoSupervisionError("no supervised frames in this batch")

    selected = probabilities[supervised_frames].clamp(eps, 1.0 - eps)
    target = gt[supervised_frames]

    if setting.is_binary:
        p = selected[:, 0]
        y = target.to(p.dtype)
        return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()

    picked = selected.gather(1, target[:, None].long())[:, 0]
    return -torch.log(picked).mean()


def foreground(probabilities: torch.Tensor) -> torch.Tensor:
    """(..., K, H, W) probabilities -> (..., H, W) probability of any sounding object."""
    if probabilities.shape[-3] == 1:
        return probabilities[..., 0, :, :]
    return 1.0 - probabilities[..., 0, :, :]


def masked_pooled_features(mask: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
    """
    avg(Mᵢ ⊙ Zᵢ): average-pool the (..., T, H, W) mask to the stage grid,
    weight the (..., T, C, h, w) features, then average over space.

    :return: (..., T, C)
    """
    height, width = fused.shape[-2:]
    leading = mask.shape[:-2]
    pooled_mask = F.adaptive_avg_pool2d(mask.reshape(-1, 1, *mask.shape[-2:]), (height, width))
    pooled_mask = pooled_mask.reshape(*leading, 1, height, width)
    return (pooled_mask * fused).mean(dim=(-2, -1))


def softmax_kl(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """KL(softmax(p) ∥ softmax(q)) over the last axis."""
    log_p = torch.log_softmax(p_logits, dim=-1)
    log_q = torch.log_softmax(q_logits, dim=-1)
    return (log_p.exp() * (log_p - log_q)).sum(dim=-1)


def avm_av_loss(
    mask: torch.Tensor,
    fused: Sequence[torch.Tensor],
    audio: torch.Tensor,
    projections: Sequence[Callable[[torch.Tensor], torch.Tensor]],
) -> torch.Tensor:
    """
    Σᵢ KL( softmax(avg(Mᵢ ⊙ Zᵢ)) ∥ softmax(Aᵢ) ), Aᵢ = projectionᵢ(A), mean over clips.

    :param mask: (..., T, H, W) foreground probabilities
    :param fused: per-stage (..., T, C, hᵢ, wᵢ) fused features
    :param audio: (..., T, d) audio embedding
    :param projections: per-stage maps d -> C
    """
    if len(fused) != len(projections):
        raise DimensionMismatchError(f"{len(fused)} fused stages but {len(projections)} audio projections")

    total = mask.new_zeros(())
    for z, project in zip(fused, projections):
        total = total + softmax_kl(masked_pooled_features(mask, z), project(audio)).mean()
    return total


def nearest_audio_partners(audio: torch.Tensor) -> torch.Tensor:
    """
    For each row of (..., P, d) audio, the index of the closest other row
    (Euclidean, ties to the smallest index).
    """
    pool = audio.shape[-2]
    if pool < 2:
        raise PairingPoolTooSmallError(f"AVM-VV pairing needs at least 2 clips in the pool, got {pool}")
    distances = torch.cdist(audio.detach(), audio.detach(), compute_mode="donot_use_mm_for_euclid_dist")
    eye = torch.eye(pool, dtype=torch.bool, device=audio.device)
    return distances.masked_fill(eye, float("inf")).argmin(dim=-1)


def avm_vv_loss(
    mask: torch.Tensor,
    fused: Sequence[torch.Tensor],
    audio: torch.Tensor,
    pool: PairingPool = PairingPool.VIDEO,
) -> torch.Tensor:
    """
    Pair every clip with its nearest-audio partner and sum, over stages, the
    KL between their softmax-normalized masked visual features.

    :param pool: pair within each video's T clips, or across the whole batch
    """
    if pool == PairingPool.BATCH:
        audio = audio.reshape(-1, audio.shape[-1])
    partners = nearest_audio_partners(audio)

    total = mask.new_zeros(())
    for z in fused:
        visual = masked_pooled_features(mask, z)
        if pool == PairingPool.BATCH:
            visual = visual.reshape(-1, visual.shape[-1])
        partner_visual = visual.gather(-2, partners[..., None].expand_as(visual))
        total = total + softmax_kl(visual, partner_visual).mean()
    return total


def compute_loss(
    probabilities: torch.Tensor,
    gt: torch.Tensor,
    supervised_frames: torch.Tensor,
    setting: TaskSetting,
    config: LossConfig,
    fused: Optional[Sequence[torch.Tensor]] = None,
    audio: Optional[torch.Tensor] = None,
    projections: Optional[Sequence[Callable[[torch.Tensor], torch.Tensor]]] = None,
) -> LossTerms:
    """main_loss + λ·AVM; the AVM term is not evaluated at all when λ is 0."""
    main = main_loss(probabilities, gt, setting, supervised_frames, config.eps)

    lam = config.weight_for(setting)
    if lam == 0.0:
        if config.lam and setting.kind == SettingKind.S4:
            logger.debug("λ=%s ignored under S4", config.lam)
        return LossTerms(total=main, main=main)

    if fused is None or audio is None:
        raise ValueError(f"AVM-{config.avm_variant.value} needs fused features and audio")

    mask = foreground(probabilities)
    if config.avm_variant == AvmVariant.AV:
        if projections is None:
            raise ValueError("AVM-AV needs the per-stage audio projections")
        avm = avm_av_loss(mask, fused, audio, projections)
    else:
        avm = avm_vv_loss(mask, fused, audio, config.vv_pool)

    return LossTerms(total=main + lam * avm, main=main, avm=avm)


def total_loss(
    probabilities: torch.Tensor,
    gt: torch.Tensor,
    supervised_frames: torch.Tensor,
    setting: TaskSetting,
    config: LossConfig,
    fused: Optional[Sequence[torch.Tensor]] = None,
    audio: Optional[torch.Tensor] = None,
    projections: Optional[Sequence[Callable[[torch.Tensor], torch.Tensor]]] = None,
) -> torch.Tensor:
    return compute_loss(probabilities, gt, supervised_frames, setting, config, fused, audio, projections).total
