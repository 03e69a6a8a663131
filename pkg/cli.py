"""
Command line for dataset generation, training, prediction and evaluation.

    python cli.py generate --config config/generate.toml --out data/tracks.jsonl
    python cli.py train --data data/tracks.jsonl --out models/mdn.npz
    python cli.py evaluate --data data/test.jsonl --methods mdn,kalman,linear --model models/mdn.npz --report out/report.csv
    python cli.py export-report --report out/report.csv --format md --out out/table.md
"""

import argparse
import hashlib
import logging
import sys
from pathlib import Path

from tqdm import tqdm

from utils.config_manager import ConfigManager
from utils.datagen import GenConfig, generate_dataset, summarize
from utils.errors import TrajectorySynthError
from utils.export import EXPORT_FORMATS, export_report, read_report, write_report
from utils.file_handler import (
    load_mapping, load_model, load_sequences, read_dataset, save_model,
    write_dataset, write_predictions, write_rejections,
)
from utils.harness import evaluate, extract_windows
from utils.polysnap import SegmentedTimeline, build_qp, dump_qp, waypoints_from_array
from utils.seqmodel import METHODS, TrainConfig, build_predictors, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"


def file_digest(path):
    """SHA-256 over a file, or over every .json file below a directory"""
    path = Path(path)
    digest = hashlib.sha256()
    files = sorted(path.rglob("*.json")) if path.is_dir() else [path]
    for file in files:
        digest.update(file.read_bytes())
    return digest.hexdigest()


def load_predictors(names, model_path=None):
    model = load_model(model_path)[0] if model_path and "mdn" in names else None
    return build_predictors(names, model)


def cmd_generate(args):
    config = ConfigManager(args.config).build(GenConfig, {
        "seed": args.seed,
        "count": args.count,
        "workers": args.workers,
        "noise_sigma": args.noise_sigma,
    })
    with tqdm(total=config.count, desc="Generating", unit="track") as bar:
        dataset = generate_dataset(config, progress=lambda done, total: bar.update(1))
    write_dataset(dataset, args.out)
    logger.info("Dataset summary: %s", summarize(dataset.tracks))

    if args.dump_rejections:
        write_rejections(dataset, args.dump_rejections)
    if args.dump_qp:
        for track in dataset.tracks:
            system = build_qp(
                waypoints_from_array(track.waypoints), SegmentedTimeline(track.knots), config.snap_config
            )
            dump_qp(system, args.dump_qp, prefix=f"track_{track.track_id}")
        logger.info("Dumped %d QP systems to %s", len(dataset.tracks), args.dump_qp)
    return 0


def cmd_train(args):
    config = ConfigManager(args.config).build(TrainConfig, {"seed": args.seed, "epochs": args.epochs})
    tracks = read_dataset(args.data)
    with tqdm(total=config.epochs, desc="Training", unit="epoch") as bar:
        def progress(epoch, epochs, loss):
            bar.set_postfix(nll=f"{loss:.3f}")
            bar.update(1)

        result = train(tracks, config, progress=progress)
    save_model(result.model, args.out, config=config, losses=result.losses)
    logger.info("Final mean NLL %.4f over %d windows", result.losses[-1], result.windows)
    return 0


def cmd_predict(args):
    predictor = load_predictors([args.method], args.model)[0]
    tracks = load_sequences(args.input, load_mapping(args.mapping))
    rows = []
    for track in tqdm(tracks, desc="Predicting", unit="track"):
        for window in extract_windows(track, args.obs, args.horizon, args.stride):
            if hasattr(predictor, "forecast"):
                forecast = predictor.forecast(window.observed, args.horizon)
                means, covariances = forecast.means, forecast.covariances.tolist()
            else:
                means, covariances = predictor.predict(window.observed, args.horizon), None
            rows.append({
                "track_id": window.sequence_id,
                "start": window.start,
                "method": predictor.name,
                "horizon": args.horizon,
                "mean": means.tolist(),
                "cov": covariances,
            })
    write_predictions(rows, args.out)
    logger.info("Wrote %d forecasts to %s", len(rows), args.out)
    return 0


def cmd_evaluate(args):
    names = [name.strip() for name in args.methods.split(",") if name.strip()]
    horizons = [int(h) for h in args.horizons.split(",")]
    predictors = load_predictors(names, args.model)
    tracks = load_sequences(args.data, load_mapping(args.mapping))

    metadata = {
        "dataset": str(args.data),
        "dataset_hash": file_digest(args.data),
        "methods": names,
    }
    if args.model:
        _, model_metadata = load_model(args.model)
        metadata["model_hash"] = file_digest(args.model)
        metadata["train_config"] = model_metadata.get("train_config")

    with tqdm(total=len(tracks), desc="Windows", unit="track") as bar:
        report = evaluate(
            predictors, tracks, horizons=horizons, obs_len=args.obs, stride=args.stride,
            metadata=metadata, progress=lambda done, total: bar.update(1),
        )
    write_report(report, args.report)
    print(report.to_frame().to_string(index=False))
    return 0


def cmd_export_report(args):
    report = read_report(args.report)
    out = args.out or Path(args.report).with_suffix("." + args.format)
    export_report(report, out, args.format)
    logger.info("Exported %s report to %s", args.format, out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Synthetic UAV image tracks and trajectory forecasting")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Generate a synthetic track dataset")
    generate.add_argument("--config", help="Flat TOML file with GenConfig keys")
    generate.add_argument("--seed", type=int)
    generate.add_argument("--count", type=int)
    generate.add_argument("--workers", type=int)
    generate.add_argument("--noise-sigma", type=float)
    generate.add_argument("--out", required=True)
    generate.add_argument("--dump-qp", metavar="DIR", help="Write Q, A, b of every accepted track")
    generate.add_argument("--dump-rejections", metavar="PATH", help="Write the rejection histogram as JSON")
    generate.set_defaults(func=cmd_generate)

    train_parser = commands.add_parser("train", help="Train the RNN-MDN on a dataset")
    train_parser.add_argument("--data", required=True)
    train_parser.add_argument("--config", help="Flat TOML file with TrainConfig keys")
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--epochs", type=int)
    train_parser.add_argument("--out", required=True)
    train_parser.set_defaults(func=cmd_train)

    predict = commands.add_parser("predict", help="Forecast every window of a dataset")
    predict.add_argument("--method", choices=METHODS, required=True)
    predict.add_argument("--model")
    predict.add_argument("--obs", type=int, default=8)
    predict.add_argument("--horizon", type=int, default=12)
    predict.add_argument("--stride", type=int, default=1)
    predict.add_argument("--mapping", help="TOML annotation field mapping")
    predict.add_argument("--in", dest="input", required=True)
    predict.add_argument("--out", required=True)
    predict.set_defaults(func=cmd_predict)

    evaluate_parser = commands.add_parser("evaluate", help="FDE report of several methods")
    evaluate_parser.add_argument("--data", required=True)
    evaluate_parser.add_argument("--methods", default="mdn,kalman,linear")
    evaluate_parser.add_argument("--model")
    evaluate_parser.add_argument("--horizons", default="8,10,12")
    evaluate_parser.add_argument("--obs", type=int, default=8)
    evaluate_parser.add_argument("--stride", type=int, default=1)
    evaluate_parser.add_argument("--mapping", help="TOML annotation field mapping")
    evaluate_parser.add_argument("--report", required=True)
    evaluate_parser.set_defaults(func=cmd_evaluate)

    export = commands.add_parser("export-report", help="Convert a report to csv, md or xlsx")
    export.add_argument("--report", required=True)
    export.add_argument("--format", choices=EXPORT_FORMATS, default="md")
    export.add_argument("--out")
    export.set_defaults(func=cmd_export_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        return args.func(args)
    except TrajectorySynthError as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
