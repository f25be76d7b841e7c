from prefect_avs.data.loader import AVSDataset, load_dataset, load_sample, load_split
from prefect_avs.data.manifest import DatasetManifest, ManifestEntry, PathTemplate, Split, Subset, write_manifest
from prefect_avs.data.synth import SynthConfig, corpus_digest, generate_synthetic

__all__ = [
    "AVSDataset",
    "DatasetManifest",
    "ManifestEntry",
    "PathTemplate",
    "Split",
    "Subset",
    "SynthConfig",
    "corpus_digest",
    "generate_synthetic",
    "load_dataset",
    "load_sample",
    "load_split",
    "write_manifest",
]
