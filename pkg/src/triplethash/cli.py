"""Command-line pipeline: gen-data, train, encode, retrieve, eval, export-curves.

Every failure prints one `category: message` line to stderr and exits with
the category's code: 2 usage, 3 io, 4 format, 5 invariant. All randomness
is governed by the resolved seed (--seed flag, then the config file's seed,
then the TDH_SEED environment variable, then 0).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import codes as codes_mod
from . import dataio, metrics, retrieval, trainer
from .dataio import DataFormatError, SplitSpec
from .encoder import load_params
from .linalg import NotSPDError, ShapeError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_INVARIANT = 5

_EXIT_CODE_DOC = """exit codes:
  0  success
  2  usage: unknown flag or bad flag value
  3  io: missing or unreadable file
  4  format: malformed data file (message names file and line)
  5  invariant: shape mismatch, non-SPD solve, divergence, bad argument
"""


def _resolve_seed(flag_seed: int | None, config_seed: int | None = None) -> int:
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return config_seed
    env = os.environ.get("TDH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"TDH_SEED must be an integer, got {env!r}") from None
    return 0


def _split_spec(args, seed: int) -> SplitSpec:
    return SplitSpec(
        query_fraction=args.query_fraction, train_size=args.train_size, seed=seed
    )


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--query-fraction",
        type=float,
        default=0.1,
        help="fraction of instances held out as queries",
    )
    p.add_argument(
        "--train-size",
        type=int,
        default=None,
        help="training instances sampled from the retrieval set (default: all)",
    )


def _add_seed_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--seed", type=int, default=None, help="seed (default: config, then TDH_SEED, then 0)"
    )


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args.seed)
    dataset = dataio.generate_synthetic(
        num_classes=args.classes,
        per_class=args.per_class,
        text_dim=args.text_dim,
        image_dim=args.image_dim,
        noise_sigma=args.noise_sigma,
        multilabel_rate=args.multilabel_rate,
        seed=seed,
    )
    dataio.save_dataset(dataset, args.out)
    print(f"wrote {dataset.n} instances to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    seed = _resolve_seed(args.seed, config.seed if args.config else None)
    config = trainer.with_overrides(config, seed=seed)
    dataset = dataio.load_dataset_dir(args.data_dir, _split_spec(args, seed))
    _, _, codes, history = trainer.train(
        dataset, config, out_dir=args.out, resume=args.resume
    )
    print(
        f"trained {len(history)} epochs on {codes.shape[1]} instances, "
        f"final total loss {history[-1].total:.6g}" if history else
        f"initialized codes for {codes.shape[1]} instances (0 epochs)"
    )
    return EXIT_OK


def cmd_encode(args) -> int:
    params, _ = load_params(args.params)
    features = dataio.read_features(args.features)
    ids = labels = None
    if args.labels:
        ids, labels = dataio.read_labels(args.labels)
        if len(ids) != features.shape[1]:
            raise DataFormatError(
                f"{args.labels} lists {len(ids)} instances but {args.features} has "
                f"{features.shape[1]}"
            )
    if args.split != "all":
        seed = _resolve_seed(args.seed)
        split = dataio.make_split(features.shape[1], _split_spec(args, seed))
        idx = np.asarray(getattr(split, args.split))
        features = features[:, idx]
        if ids is not None:
            ids = [ids[i] for i in idx]
            labels = [labels[i] for i in idx]
    out_codes = retrieval.encode_out_of_sample(params, features)
    codes_mod.save_codes(args.out, out_codes)
    if args.manifest:
        if ids is None:
            raise ValueError("--manifest requires --labels")
        retrieval.save_manifest(args.manifest, ids, labels)
    print(f"encoded {out_codes.shape[1]} items at {out_codes.shape[0]} bits")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    index_dir = Path(args.index)
    index = retrieval.load_index(index_dir / "codes.tdhbin", index_dir / "manifest.csv")
    params_file = trainer.PARAMS_X_FILE if args.modality == "text" else trainer.PARAMS_Y_FILE
    params, _ = load_params(Path(args.ckpt) / params_file)
    queries = dataio.read_features(args.query)
    query_codes = retrieval.encode_out_of_sample(params, queries)
    for j in range(query_codes.shape[1]):
        for item_id, dist in retrieval.rank(index, query_codes[:, j], args.top):
            print(f"{item_id},{dist}")
    return EXIT_OK


def _eval_setup(args):
    """Load dataset + checkpoint and build (queries, index, query params)."""
    config = trainer.load_config(args.config) if args.config else None
    seed = _resolve_seed(args.seed, config.seed if config else None)
    dataset = dataio.load_dataset_dir(args.data_dir, _split_spec(args, seed))
    ckpt = Path(args.ckpt)
    text_params, _ = load_params(ckpt / trainer.PARAMS_X_FILE)
    image_params, _ = load_params(ckpt / trainer.PARAMS_Y_FILE)
    if args.modality == "text":
        query_params, db_params = text_params, image_params
        query_feats, db_feats = dataset.text_features, dataset.image_features
    else:
        query_params, db_params = image_params, text_params
        query_feats, db_feats = dataset.image_features, dataset.text_features
    q_idx = np.asarray(dataset.split.query)
    db_idx = np.asarray(dataset.split.retrieval)
    queries = metrics.QuerySet(
        query_feats[:, q_idx],
        [dataset.labels[i] for i in q_idx],
        [dataset.ids[i] for i in q_idx],
    )
    db_codes = retrieval.encode_out_of_sample(db_params, db_feats[:, db_idx])
    index = retrieval.build_index(
        db_codes,
        [dataset.ids[i] for i in db_idx],
        [dataset.labels[i] for i in db_idx],
    )
    return queries, index, query_params


def cmd_eval(args) -> int:
    queries, index, query_params = _eval_setup(args)
    value = metrics.mean_average_precision(
        queries, index, query_params, r_cap=args.r_cap, exclude_self=not args.include_self
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_map_csv(out / "map.csv", value)
    print(f"map,{value!r}")
    return EXIT_OK


def cmd_export_curves(args) -> int:
    queries, index, query_params = _eval_setup(args)
    exclude_self = not args.include_self
    pr = metrics.precision_recall_curve(queries, index, query_params, exclude_self)
    if args.n_values:
        n_values = [int(v) for v in args.n_values.split(",") if v.strip()]
    else:
        db = len(index)
        n_values = sorted({max(1, round(db * f / 10)) for f in range(1, 11)})
    topn = metrics.topn_precision_curve(
        queries, index, query_params, n_values, exclude_self
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_pr_csv(out / "pr_curve.csv", pr)
    metrics.write_topn_csv(out / "topn.csv", topn)
    print(f"wrote pr_curve.csv ({len(pr)} radii) and topn.csv ({len(topn)} points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triplethash",
        description="Cross-modal hashing: train encoders, hash, retrieve, evaluate.",
        epilog=_EXIT_CODE_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(
            name,
            help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "write a synthetic bimodal dataset")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--per-class", type=int, default=100, help="instances per class")
    p.add_argument("--text-dim", type=int, default=64, help="text feature dimension")
    p.add_argument("--image-dim", type=int, default=96, help="image feature dimension")
    p.add_argument("--noise-sigma", type=float, default=0.2, help="feature noise stddev")
    p.add_argument("--multilabel-rate", type=float, default=0.0, help="second-label fraction")
    _add_seed_flag(p)
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("train", cmd_train, "train both encoders and write a checkpoint")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data-dir", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    _add_split_flags(p)
    _add_seed_flag(p)

    p = add("encode", cmd_encode, "hash a feature file with a saved encoder")
    p.add_argument("--params", required=True, help="encoder checkpoint (.tdh)")
    p.add_argument("--features", required=True, help="feature CSV to encode")
    p.add_argument("--labels", default=None, help="labels CSV (for --manifest/--split)")
    p.add_argument(
        "--split",
        choices=("all", "train", "query", "retrieval"),
        default="all",
        help="encode only this split of the file",
    )
    p.add_argument("--out", required=True, help="output packed codes file")
    p.add_argument("--manifest", default=None, help="also write an id/label manifest CSV")
    _add_split_flags(p)
    _add_seed_flag(p)

    p = add("retrieve", cmd_retrieve, "rank an index by Hamming distance to queries")
    p.add_argument("--index", required=True, help="directory with codes.tdhbin + manifest.csv")
    p.add_argument("--ckpt", required=True, help="checkpoint directory for the query encoder")
    p.add_argument("--modality", choices=("text", "image"), required=True, help="query modality")
    p.add_argument("--query", required=True, help="query feature CSV")
    p.add_argument("--top", type=int, default=10, help="results per query")

    for name, func, help_text in (
        ("eval", cmd_eval, "cross-modal MAP over the query split"),
        ("export-curves", cmd_export_curves, "precision-recall and topN curve CSVs"),
    ):
        p = add(name, func, help_text)
        p.add_argument("--ckpt", required=True, help="checkpoint directory")
        p.add_argument("--data-dir", required=True, help="dataset directory")
        p.add_argument("--config", default=None, help="training config (reused for seed)")
        p.add_argument(
            "--modality", choices=("text", "image"), required=True,
            help="query modality; the database is the other modality",
        )
        p.add_argument("--out", required=True, help="output directory for CSV reports")
        p.add_argument(
            "--include-self", action="store_true",
            help="keep database items whose id equals the query id",
        )
        _add_split_flags(p)
        _add_seed_flag(p)
        if name == "eval":
            p.add_argument("--r-cap", type=int, default=None, help="AP ranking cutoff")
        else:
            p.add_argument("--n-values", default=None, help="comma-separated topN cutoffs")

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, NotSPDError, trainer.TrainingDivergedError) as exc:
        print(f"invariant: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, IndexError) as exc:
        print(f"invariant: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main() -> None:
    sys.exit(run())
