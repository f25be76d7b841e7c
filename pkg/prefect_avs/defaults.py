default_sample_rate = 16000
default_window_length = 400
default_hop_length = 160
default_n_fft = 512
default_mel_bins = 64
default_log_floor = 1e-6

default_audio_dim = 128
default_fusion_channels = 256

# frames are stored in [0, 1]; the model normalizes with these per-channel stats
default_frame_mean = (0.5, 0.5, 0.5)
default_frame_std = (0.5, 0.5, 0.5)

default_objects_clips = 5
default_semantic_clips = 10

checkpoint_format = "prefect-avs/checkpoint-v1"

default_bundle_media_type = "application/vnd.prefect-avs.bundle.v1.tar+gzip"
default_bundle_artifact_type = "application/vnd.prefect-avs.checkpoint.v1"
