from prefect_avs.audio.encoder import AudioEncoder, encode_audio
from prefect_avs.audio.spectrogram import SpectrogramConfig, count_clips, mel_filterbank, waveform_to_logmel
