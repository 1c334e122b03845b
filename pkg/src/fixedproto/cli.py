"""Command-line interface: gen-data, train, eval, explain, compare.

Every command writes a run manifest holding the config snapshot, seeds and
output inventory, so a run can be reproduced exactly from its manifest.
Exit codes: 0 success, 2 config/validation error, 3 training divergence,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .data import Dataset, SynthConfig, generate_synthetic, joint_probability_table, load_table, save_dataset, split
from .explain import explain_sample, explanation_to_csv_text, explanation_to_doc, zero_block_activity
from .metrics import accuracy, disentanglement_report, separation_report
from .model import (
    classifier_from_doc,
    classifier_to_doc,
    embedder_from_doc,
    embedder_to_doc,
    forward,
)
from .prototypes import (
    class_orthogonal_extractor,
    extractor_from_doc,
    extractor_to_doc,
    factor_coded_extractor,
    fit_factor_coder,
)
from .training import DivergenceError, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

CHECKPOINT_FORMAT = "model-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _load_config(path) -> dict:
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    version = doc.get("schema_version", 1)
    if version != 1:
        raise ConfigError(f"{path}: unsupported schema_version {version!r}")
    return doc


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _write_text(path, text) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _manifest(command: str, config_doc, seeds: dict, inputs: dict, outputs, extractor_doc=None) -> dict:
    return {
        "format": "run-manifest",
        "version": 1,
        "command": command,
        "package_version": __version__,
        "created_utc": _utc_now(),
        "config": config_doc,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": list(outputs),
        "extractor": extractor_doc,
    }


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _table(rows, header) -> str:
    """Aligned plain-text table."""
    rows = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for r, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    doc = _load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = SynthConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{args.config}: {e}") from None
    dataset = generate_synthetic(config)
    save_dataset(dataset, args.out)
    manifest = _manifest(
        "gen-data",
        config.to_dict(),
        {"seed": config.seed},
        {"config": str(args.config)},
        [os.path.basename(str(args.out))],
    )
    _write_json(str(args.out) + ".manifest.json", manifest)
    _say(args, f"wrote {dataset.n} samples ({dataset.class_count} classes, "
               f"{dataset.factor_count} factors) to {args.out}")
    return EXIT_OK


def _build_extractor(config: TrainConfig, train_set: Dataset):
    """Extractor per config; the factor coder is fit on the training split."""
    if config.loss == "ce":
        return None
    kind = config.extractor.get("kind")
    if kind == "class-orthogonal":
        seed = config.extractor.get("seed", config.seed)
        return class_orthogonal_extractor(train_set.class_count, config.embedding_dim, seed)
    if kind == "factor-coded":
        if train_set.factors is None:
            raise ConfigError("factor-coded extractor needs a dataset with factor columns")
        coder = fit_factor_coder(
            [train_set.factors[:, i] for i in range(train_set.factor_count)],
            names=train_set.factor_names,
        )
        return factor_coded_extractor(coder, train_set.factor_count, config.embedding_dim)
    raise ConfigError(f"unknown extractor kind {kind!r}")


def _checkpoint_doc(embedder, classifier, dataset, config) -> dict:
    # Only what defines the trained predictor; the extractor and loss
    # settings live in extractor.json / manifest.json alongside it.
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": dataset.input_dim,
        "embedding_dim": config.embedding_dim,
        "class_count": dataset.class_count,
        "class_names": list(dataset.class_names),
        "factor_names": list(dataset.factor_names),
        "seed": config.seed,
        "embedder": embedder_to_doc(embedder),
        "classifier": classifier_to_doc(classifier),
    }


def _load_checkpoint(path):
    doc = _load_json(path)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    embedder = embedder_from_doc(doc["embedder"])
    classifier = classifier_from_doc(doc["classifier"])
    return doc, embedder, classifier


def _load_extractor_for(checkpoint_path, override=None):
    """The extractor serialized next to a checkpoint, if any."""
    path = override
    if path is None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(str(checkpoint_path))),
                                 "extractor.json")
        if not os.path.exists(candidate):
            return None
        path = candidate
    return extractor_from_doc(_load_json(path))


def _run_training(dataset: Dataset, config: TrainConfig):
    """Split, fit the coder on the training side, build the extractor, train.

    Returns (embedder, classifier, history, extractor, val_set).
    """
    if config.train_fraction < 1.0:
        train_set, val_set = split(dataset, config.train_fraction, config.seed)
    else:
        train_set, val_set = dataset, None
    extractor = _build_extractor(config, train_set)
    embedder, classifier, history = train(train_set, extractor, config, val=val_set)
    return embedder, classifier, history, extractor, val_set


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.lambda_p is not None:
        doc["lambda_p"] = args.lambda_p
    if args.loss is not None:
        doc["loss"] = args.loss
    try:
        config = TrainConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{args.config}: {e}") from None
    dataset = load_table(args.data)

    # Validate everything before creating any output.
    embedder, classifier, history, extractor, _ = _run_training(dataset, config)

    os.makedirs(args.out, exist_ok=True)
    extractor_doc = None if extractor is None else extractor_to_doc(extractor)
    outputs = ["checkpoint.json", "history.csv", "history.json", "manifest.json"]
    _write_json(
        os.path.join(args.out, "checkpoint.json"),
        _checkpoint_doc(embedder, classifier, dataset, config),
    )
    _write_text(os.path.join(args.out, "history.csv"), history.to_csv_text())
    _write_json(os.path.join(args.out, "history.json"), history.to_doc())
    if extractor_doc is not None:
        _write_json(os.path.join(args.out, "extractor.json"), extractor_doc)
        outputs.insert(3, "extractor.json")
    manifest = _manifest(
        "train",
        config.to_dict(),
        {"seed": config.seed},
        {"config": str(args.config), "data": str(args.data)},
        outputs,
        extractor_doc,
    )
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    final = history.final
    val_part = "" if final.val_accuracy is None else f", val_accuracy={final.val_accuracy:.4f}"
    _say(args, f"trained {config.epochs} epochs: loss={final.total_loss:.4f}, "
               f"train_accuracy={final.train_accuracy:.4f}{val_part}")
    _say(args, f"outputs in {args.out}")
    return EXIT_OK


def _eval_doc(doc, embedder, classifier, extractor, dataset: Dataset) -> dict:
    if dataset.input_dim != doc["input_dim"]:
        raise ConfigError(
            f"checkpoint expects input_dim {doc['input_dim']}, dataset has {dataset.input_dim}"
        )
    if dataset.class_count != doc["class_count"]:
        raise ConfigError(
            f"checkpoint expects {doc['class_count']} classes, dataset has {dataset.class_count}"
        )
    trace = forward(embedder, classifier, dataset.X)
    acc = accuracy(trace.probs, dataset.Y)
    prototypes = None
    if extractor is not None:
        if extractor.kind == "class-orthogonal":
            prototypes = extractor.extract_batch(dataset.Y)
        elif dataset.factors is not None:
            prototypes = extractor.extract_batch(codes=extractor.coder.code(dataset.factors))
    separation = separation_report(trace.z, dataset.Y, prototypes).to_dict()
    disentanglement = None
    joint = None
    zero_block = None
    if extractor is not None and extractor.kind == "factor-coded" and dataset.factors is not None:
        levels = extractor.coder.level_indices(dataset.factors)
        disentanglement = disentanglement_report(trace.z, levels, extractor.layout).to_dict()
        joint = joint_probability_table(dataset, extractor.coder).tolist()
        if extractor.layout.zero_dim > 0:
            zero_block = zero_block_activity(trace.z, extractor.layout).tolist()
    return {
        "format": "eval-report",
        "version": 1,
        "n_samples": dataset.n,
        "accuracy": acc,
        "separation": separation,
        "disentanglement": disentanglement,
        "zero_block_mean_abs_per_dim": zero_block,
        "joint_probabilities": joint,
    }


def _print_eval(args, report: dict) -> None:
    if args.quiet:
        return
    sep = report["separation"]
    rows = [
        ["accuracy", f"{report['accuracy']:.4f}"],
        ["mean |cos| between class centroids", f"{sep['mean_abs_cos']:.4f}"],
        ["max |cos| between class centroids", f"{sep['max_abs_cos']:.4f}"],
        ["mean within-class distance", f"{sep['mean_within_class_dist']:.4f}"],
    ]
    if sep["mean_prototype_dist"] is not None:
        rows.append(["mean embedding-to-prototype distance", f"{sep['mean_prototype_dist']:.4f}"])
    print(_table(rows, ["metric", "value"]))
    if report["disentanglement"] is not None:
        rows = []
        for f in report["disentanglement"]["factors"]:
            rows.append([
                f["name"],
                f"{f['designated_accuracy']:.4f}",
                "-" if f["zero_block_accuracy"] is None else f"{f['zero_block_accuracy']:.4f}",
                "-" if f["other_factors_accuracy"] is None else f"{f['other_factors_accuracy']:.4f}",
            ])
        print()
        print(_table(rows, ["factor", "own dims", "zero block", "other dims"]))


def cmd_eval(args) -> int:
    doc, embedder, classifier = _load_checkpoint(args.checkpoint)
    extractor = _load_extractor_for(args.checkpoint, args.extractor)
    dataset = load_table(args.data, class_names=doc["class_names"])
    report = _eval_doc(doc, embedder, classifier, extractor, dataset)
    _print_eval(args, report)
    if args.out is not None:
        _write_json(args.out, report)
        _say(args, f"report written to {args.out}")
    return EXIT_OK


def _parse_selector(selector: str, n: int):
    if selector == "all":
        return list(range(n))
    try:
        ids = [int(s) for s in selector.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"invalid sample selector {selector!r}") from None
    if not ids:
        raise ConfigError("empty sample selector")
    for i in ids:
        if not 0 <= i < n:
            raise ConfigError(f"sample {i} out of range [0, {n})")
    return ids


def cmd_explain(args) -> int:
    doc, embedder, classifier = _load_checkpoint(args.checkpoint)
    extractor = _load_extractor_for(args.checkpoint, args.extractor)
    dataset = load_table(args.data, class_names=doc["class_names"])
    if dataset.input_dim != doc["input_dim"]:
        raise ConfigError(
            f"checkpoint expects input_dim {doc['input_dim']}, dataset has {dataset.input_dim}"
        )
    layout = extractor.layout if extractor is not None and extractor.kind == "factor-coded" else None
    ids = _parse_selector(args.samples, dataset.n)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for i in ids:
        expl = explain_sample(
            embedder,
            classifier,
            dataset.X[i],
            sample_id=i,
            layout=layout,
            class_names=dataset.class_names,
        )
        if not np.array_equal(expl.gamma.sum(axis=0), expl.logits):
            raise RuntimeError("relevance column sums diverged from logits")
        base = f"sample_{i:05d}"
        _write_text(os.path.join(args.out, base + ".csv"), explanation_to_csv_text(expl))
        _write_json(os.path.join(args.out, base + ".json"), explanation_to_doc(expl))
        outputs.extend([base + ".csv", base + ".json"])
    manifest = _manifest(
        "explain",
        {"samples": args.samples},
        {"seed": doc["seed"]},
        {"checkpoint": str(args.checkpoint), "data": str(args.data)},
        outputs,
        None if extractor is None else extractor_to_doc(extractor),
    )
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    _say(args, f"wrote {len(ids)} explanation(s) to {args.out}")
    return EXIT_OK


def _comparison_run(dataset: Dataset, config: TrainConfig, loss_kind: str, seed: int) -> dict:
    """One training run scored on its held-out split."""
    run_config = TrainConfig.from_dict({**config.to_dict(), "loss": loss_kind, "seed": seed})
    embedder, classifier, history, extractor, val_set = _run_training(dataset, run_config)
    trace = forward(embedder, classifier, val_set.X)
    prototypes = None
    if extractor is not None and extractor.kind == "class-orthogonal":
        prototypes = extractor.extract_batch(val_set.Y)
    elif extractor is not None and val_set.factors is not None:
        prototypes = extractor.extract_batch(codes=extractor.coder.code(val_set.factors))
    sep = separation_report(trace.z, val_set.Y, prototypes)
    return {
        "seed": seed,
        "accuracy": accuracy(trace.probs, val_set.Y),
        "mean_abs_cos": sep.mean_abs_cos,
        "mean_prototype_dist": sep.mean_prototype_dist,
        "final_train_accuracy": history.final.train_accuracy,
    }


def run_comparison(dataset: Dataset, config: TrainConfig, seeds, jobs: int = 1) -> dict:
    """Train the prototype loss and the CE baseline over the given seeds.

    Each (loss, seed) run is independent and internally deterministic, so
    the result does not depend on ``jobs``.
    """
    if config.train_fraction >= 1.0:
        raise ConfigError("compare needs train_fraction < 1 for a held-out split")
    tasks = [(loss_kind, seed) for loss_kind in ("proto", "ce") for seed in seeds]
    results = {}
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_comparison_run, dataset, config, loss_kind, seed): (loss_kind, seed)
                for loss_kind, seed in tasks
            }
            for fut, key in futures.items():
                results[key] = fut.result()
    else:
        for key in tasks:
            results[key] = _comparison_run(dataset, config, *key)
    systems = {}
    for loss_kind, name in (("proto", "predefined-prototype"), ("ce", "cross-entropy")):
        runs = [results[(loss_kind, seed)] for seed in seeds]
        acc = np.array([r["accuracy"] for r in runs])
        cos = np.array([r["mean_abs_cos"] for r in runs])
        ddof = 1 if len(runs) > 1 else 0
        systems[name] = {
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std(ddof=ddof)),
            "mean_abs_cos_mean": float(cos.mean()),
            "mean_abs_cos_std": float(cos.std(ddof=ddof)),
            "runs": runs,
        }
    return {
        "format": "comparison",
        "version": 1,
        "seeds": list(seeds),
        "config": config.to_dict(),
        "systems": systems,
    }


def cmd_compare(args) -> int:
    doc = _load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{args.config}: {e}") from None
    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        if not seeds:
            raise ConfigError("empty seed list")
    else:
        seeds = [config.seed + i for i in range(args.num_seeds)]
    dataset = load_table(args.data)
    comparison = run_comparison(dataset, config, seeds, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "comparison.json"), comparison)
    manifest = _manifest(
        "compare",
        config.to_dict(),
        {"seeds": seeds},
        {"config": str(args.config), "data": str(args.data)},
        ["comparison.json", "manifest.json"],
    )
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    if not args.quiet:
        rows = []
        for name, s in comparison["systems"].items():
            rows.append([
                name,
                f"{s['accuracy_mean']:.4f} ± {s['accuracy_std']:.4f}",
                f"{s['mean_abs_cos_mean']:.4f} ± {s['mean_abs_cos_std']:.4f}",
            ])
        print(_table(rows, ["system", "accuracy", "centroid |cos|"]))
        print(f"\noutputs in {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixedproto",
        description="Train embedders against fixed, human-specified prototypes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("data", help="dataset file")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--lambda-p", type=float, default=None, dest="lambda_p",
                   help="override the prototype term weight")
    p.add_argument("--loss", choices=("proto", "ce"), default=None, help="override the loss")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("checkpoint", help="checkpoint.json from train")
    p.add_argument("data", help="dataset file")
    p.add_argument("--out", default=None, help="write the metrics JSON here")
    p.add_argument("--extractor", default=None,
                   help="extractor JSON (default: extractor.json next to the checkpoint)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="export per-sample relevance explanations")
    p.add_argument("checkpoint", help="checkpoint.json from train")
    p.add_argument("data", help="dataset file")
    p.add_argument("--samples", default="0", help="'all' or comma-separated sample indices")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--extractor", default=None,
                   help="extractor JSON (default: extractor.json next to the checkpoint)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="prototype loss vs cross-entropy over several seeds")
    p.add_argument("data", help="dataset file")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--seeds", default=None, help="comma-separated explicit seed list")
    p.add_argument("--num-seeds", type=int, default=3, help="number of seeds when --seeds is absent")
    p.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
