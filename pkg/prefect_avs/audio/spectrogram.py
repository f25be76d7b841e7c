import functools
import logging
import math
from typing import Optional

import numpy as np
import torch
import torchaudio.functional as AF
from pydantic import BaseModel, ConfigDict, Field, model_validator

from prefect_avs.defaults import (
    default_hop_length,
    default_log_floor,
    default_mel_bins,
    default_n_fft,
    default_sample_rate,
    default_window_length,
)
from prefect_avs.errors import DimensionMismatchError, NonFiniteError, WaveformTooShortError

logger = logging.getLogger(__name__)


class SpectrogramConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(default_sample_rate, gt=0, description="Waveform sample rate in Hz")
    window_length: int = Field(default_window_length, gt=0, description="STFT window length in samples")
    hop_length: int = Field(default_hop_length, gt=0, description="STFT hop in samples")
    n_fft: int = Field(default_n_fft, gt=0, description="FFT size, at least the window length")
    mel_bins: int = Field(default_mel_bins, ge=1, description="Number of mel filters")
    log_floor: float = Field(default_log_floor, gt=0, description="ε added to mel power before the log")

    @model_validator(mode="after")
    def _check_framing(self) -> "SpectrogramConfig":
        if self.hop_length > self.window_length:
            raise ValueError(f"hop ({self.hop_length}) must not exceed window ({self.window_length})")
        if self.n_fft < self.window_length:
            raise ValueError(f"n_fft ({self.n_fft}) must be at least the window ({self.window_length})")
        if self.window_length > self.sample_rate:
            raise ValueError("window must fit inside a one-second chunk")
        return self

    @property
    def time_bins(self) -> int:
        """STFT frames in one second of audio (no centre padding)."""
        return 1 + (self.sample_rate - self.window_length) // self.hop_length


@functools.lru_cache(maxsize=8)
def mel_filterbank(config: SpectrogramConfig) -> torch.Tensor:
    """(n_fft // 2 + 1, mel_bins) triangular HTK-scale filterbank, float64."""
    return AF.melscale_fbanks(
        n_freqs=config.n_fft // 2 + 1,
        f_min=0.0,
        f_max=config.sample_rate / 2,
        n_mels=config.mel_bins,
        sample_rate=config.sample_rate,
        norm=None,
        mel_scale="htk",
    ).to(torch.float64)


def count_clips(num_samples: int, config: SpectrogramConfig) -> int:
    """
    Number of one-second clips a waveform spans.

    A trailing remainder of at most one hop is dropped; a longer partial
    chunk counts as a final, zero-padded clip.
    """
    return math.ceil((num_samples - config.hop_length) / config.sample_rate)


def waveform_to_logmel(
    waveform: np.ndarray | torch.Tensor,
    config: SpectrogramConfig = SpectrogramConfig(),
    num_clips: Optional[int] = None,
) -> torch.Tensor:
    """
    Split a waveform into one-second chunks and compute log-mel frames for each.

    :param waveform: mono (samples,) or multi-channel (samples, channels) audio
    :param config: STFT / mel framing
    :param num_clips: T; inferred from the waveform length when omitted
    :return: (T, time_bins, mel_bins) tensor of log(mel power + ε)
    """
    signal = torch.as_tensor(np.asarray(waveform) if not isinstance(waveform, torch.Tensor) else waveform)
    if not signal.is_floating_point():
        signal = signal.to(torch.float32)
    if signal.ndim == 2:
        signal = signal.mean(dim=1)
    if signal.ndim != 1:
        raise DimensionMismatchError(f"waveform must be 1-D or (samples, channels), got shape {tuple(signal.shape)}")
    if not torch.isfinite(signal).all():
        raise NonFiniteError("waveform has non-finite samples")

    clips = num_clips if num_clips is not None else count_clips(signal.numel(), config)
    if clips < 1 or (num_clips is not None and signal.numel() < clips * config.sample_rate - config.hop_length):
        raise WaveformTooShortError(
            f"waveform of {signal.numel()} samples cannot fill {max(clips, 1)} clip(s) "
            f"of {config.sample_rate} samples (tolerance one hop)"
        )

    total = clips * config.sample_rate
    if signal.numel() < total:
        signal = torch.nn.functional.pad(signal, (0, total - signal.numel()))
    chunks = signal[:total].reshape(clips, config.sample_rate)

    window = torch.hann_window(config.window_length, periodic=True, dtype=chunks.dtype)
    spectrum = torch.stft(
        chunks,
        n_fft=config.n_fft,
        hop_length=config.hop_length,
        win_length=config.window_length,
        window=window,
        center=False,
        return_complex=True,
    )
    power = spectrum.abs().pow(2).transpose(1, 2)
    mel = power @ mel_filterbank(config).to(power.dtype)
    logmel = torch.log(mel + config.log_floor)

    logger.debug("Computed log-mel of shape %s from %d samples", tuple(logmel.shape), signal.numel())
    return logmel
