"""`prefect-avs` command line."""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from prefect_avs.errors import AVSError

logger = logging.getLogger(__name__)


def _synth(args: argparse.Namespace) -> None:
    from prefect_avs.data.synth import SynthConfig, corpus_digest, generate_synthetic
    from prefect_avs.engine.config import apply_overrides

    config = SynthConfig.model_validate(apply_overrides({"subset": args.subset, "seed": args.seed}, args.set))
    generate_synthetic(config, args.out)
    print(f"sha256:{corpus_digest(args.out, config.subset)}")


def _train(args: argparse.Namespace) -> None:
    from prefect_avs.data.loader import load_split
    from prefect_avs.engine.config import load_config
    from prefect_avs.engine.trainer import train

    config = load_config(args.config, args.set)
    setting, train_samples = load_split(args.data, args.subset, "train")
    _, valid_samples = load_split(args.data, args.subset, "valid")
    checkpoint = train(config, setting, train_samples, valid_samples, args.out)
    print(json.dumps(checkpoint.history[-1], sort_keys=True))


def _eval(args: argparse.Namespace) -> None:
    from prefect_avs.data.loader import load_split
    from prefect_avs.engine.trainer import evaluate

    _, samples = load_split(args.data, args.subset, args.split)
    report = evaluate(args.checkpoint, samples)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        report.dump(Path(args.out) / f"metrics_{args.split}.txt")
    print(json.dumps(report.to_flat(), sort_keys=True))


def _predict(args: argparse.Namespace) -> None:
    from prefect_avs.data.loader import load_split
    from prefect_avs.data.manifest import DatasetManifest
    from prefect_avs.engine.trainer import predict

    manifest = DatasetManifest.read(args.data, args.subset, args.split)
    _, samples = load_split(args.data, args.subset, args.split)
    predict(args.checkpoint, samples, args.out, manifest.palette())


def _heatmap(args: argparse.Namespace) -> None:
    from prefect_avs.data.loader import load_split
    from prefect_avs.engine.analysis import export_heatmaps
    from prefect_avs.engine.checkpoint import Checkpoint

    checkpoint = Checkpoint.load(args.checkpoint)
    _, samples = load_split(args.data, args.subset, args.split)
    selected = [s for s in samples if not args.video or s.video_id in args.video]
    for sample in selected:
        for stage in args.stage:
            export_heatmaps(checkpoint, sample, stage, args.out)


def _cluster(args: argparse.Namespace) -> None:
    from prefect_avs.data.loader import load_split
    from prefect_avs.engine.analysis import cluster_audio_embeddings, project_visual_features
    from prefect_avs.engine.checkpoint import Checkpoint

    checkpoint = Checkpoint.load(args.checkpoint)
    _, samples = load_split(args.data, args.subset, args.split)
    result = cluster_audio_embeddings(checkpoint, samples, k=args.k, seed=args.seed, out_dir=args.out)
    if args.tsne:
        import numpy as np

        points = project_visual_features(checkpoint, samples, seed=args.seed)
        with open(Path(args.out) / "visual_tsne.tsv", "w") as f:
            for (video_id, t), label, (x, y) in zip(result.keys, result.labels, np.asarray(points)):
                f.write(f"{video_id}\t{t}\t{int(label)}\t{x:.6f}\t{y:.6f}\n")


def _publish(args: argparse.Namespace) -> None:
    from prefect_avs.deployments.steps.push import publish_checkpoint

    result = asyncio.run(publish_checkpoint(args.name, args.tag, args.run_dir))
    print(json.dumps(result))


def _fetch(args: argparse.Namespace) -> None:
    from prefect_avs.deployments.steps.pull import fetch_checkpoint

    result = asyncio.run(fetch_checkpoint(args.name, args.tag, args.out))
    print(json.dumps(result))


def _data_arguments(parser: argparse.ArgumentParser, split: Optional[str] = "test") -> None:
    parser.add_argument("--data", required=True, help="Dataset root")
    parser.add_argument("--subset", default="multi_source", choices=["single_source", "multi_source", "semantic"])
    if split:
        parser.add_argument("--split", default=split, choices=["train", "valid", "test"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefect-avs", description="Audio-visual segmentation toolkit")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Generate the synthetic sounding-shapes corpus")
    synth.add_argument("--out", required=True)
    synth.add_argument("--subset", default="multi_source", choices=["single_source", "multi_source", "semantic"])
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="SynthConfig override")
    synth.set_defaults(handler=_synth)

    train = commands.add_parser("train", help="Train a model")
    _data_arguments(train, split=None)
    train.add_argument("--config", help="YAML run configuration")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Configuration override")
    train.add_argument("--out", required=True, help="Run directory")
    train.set_defaults(handler=_train)

    evaluate = commands.add_parser("eval", help="Compute mIoU and F-score")
    _data_arguments(evaluate)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--out")
    evaluate.set_defaults(handler=_eval)

    predict = commands.add_parser("predict", help="Write palette-encoded predicted masks")
    _data_arguments(predict)
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--out", required=True)
    predict.set_defaults(handler=_predict)

    heatmap = commands.add_parser("heatmap", help="Export TPAVI attention heatmaps")
    _data_arguments(heatmap)
    heatmap.add_argument("--checkpoint", required=True)
    heatmap.add_argument("--stage", type=int, action="append", default=None, choices=[1, 2, 3, 4])
    heatmap.add_argument("--video", action="append", default=[], help="Restrict to these video ids")
    heatmap.add_argument("--out", required=True)
    heatmap.set_defaults(handler=_heatmap)

    cluster = commands.add_parser("cluster", help="Cluster audio embeddings")
    _data_arguments(cluster)
    cluster.add_argument("--checkpoint", required=True)
    cluster.add_argument("-k", type=int, default=20)
    cluster.add_argument("--seed", type=int, default=0)
    cluster.add_argument("--tsne", action="store_true", help="Also project masked visual features with t-SNE")
    cluster.add_argument("--out", required=True)
    cluster.set_defaults(handler=_cluster)

    publish = commands.add_parser("publish", help="Push a run directory to an OCI registry")
    publish.add_argument("run_dir")
    publish.add_argument("--name", required=True)
    publish.add_argument("--tag", default="latest")
    publish.set_defaults(handler=_publish)

    fetch = commands.add_parser("fetch", help="Pull a published run from an OCI registry")
    fetch.add_argument("--name", required=True)
    fetch.add_argument("--tag", default="latest")
    fetch.add_argument("--out", default=None)
    fetch.set_defaults(handler=_fetch)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if getattr(args, "stage", None) is None and args.command == "heatmap":
        args.stage = [4]

    try:
        args.handler(args)
    except (AVSError, ValidationError) as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
