"""Command-line front end: ``czhash <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset import (
    generate_synthetic,
    load_dataset,
    load_split,
    make_split,
    save_dataset,
    save_split,
)
from .errors import ConfigError, CZHashError, DatasetError, NumericError, UndefinedAPError
from .experiment import (
    SWEEP_PARAMS,
    ExperimentConfig,
    ablate,
    aggregate,
    atomic_write,
    evaluate_model,
    fit,
    hash_all,
    load_checkpoint,
    load_config,
    parse_value,
    rows_to_csv,
    run_experiment,
    save_checkpoint,
    sweep,
    write_provenance,
)
from .retrieval import (
    PACKED_MAGIC,
    HammingIndex,
    HashCodes,
    load_codes_packed,
    load_codes_text,
    save_codes_packed,
    save_codes_text,
)
from .similarity import build_all, save_similarity
from .trainer import ABLATION_SIMILARITY, ABLATIONS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag name -> config key; every value is parsed by the config parser
_DATA_FLAGS = ("n", "c", "d", "d1", "d2", "labels_per_instance", "cluster_noise",
               "label_space_overlap")
_SPLIT_FLAGS = ("seen_fraction", "mask_fraction", "test_fraction")
_TRAIN_FLAGS = ("alpha", "beta", "lam", "batch_size", "iterations", "steps_per_epoch",
                "learning_rate", "similarity_scale", "ablation", "c_update", "w_update",
                "ridge", "hidden_dims", "dropout_rate", "init_scale")
_EVAL_FLAGS = ("repeats", "relevance", "map_at_k", "scenarios")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_keys(p, keys):
    for key in keys:
        p.add_argument(_flag(key), dest=key, default=None, metavar="V")


def _add_common(p, *groups, bits=True):
    p.add_argument("--config", help="flat 'key = value' config file; flags win")
    p.add_argument("--seed", default=None)
    if bits:
        p.add_argument("--bits", default=None, help="code length(s), comma separated")
    for group in groups:
        _add_keys(p, group)


def _add_train_extras(p):
    p.add_argument("--epochs", dest="iterations", default=None, metavar="V",
                   help="alias of --iterations (one iteration is one epoch)")
    p.add_argument("--exact-f", dest="exact_f", action="store_const", const="true",
                   default=None, help="recompute all features before every minibatch")


def _resolve(args, **extra) -> ExperimentConfig:
    overrides = {}
    for key in ("seed", "bits", *_DATA_FLAGS, *_SPLIT_FLAGS, *_TRAIN_FLAGS, *_EVAL_FLAGS,
                "exact_f", "scenario", "output"):
        value = getattr(args, key, None)
        if value is None:
            continue
        target = "scenarios" if key == "scenario" else key
        overrides[target] = parse_value(target, str(value))
    overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="czhash", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"czhash {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    _add_common(p, _DATA_FLAGS, bits=False)
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="write a scenario split file")
    _add_common(p, _SPLIT_FLAGS, bits=False)
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", default="A", choices=("A", "B", "C", "D"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_common(p, _TRAIN_FLAGS, _SPLIT_FLAGS)
    _add_train_extras(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="split file (default: derived from --scenario and --seed)")
    p.add_argument("--scenario", default=None, choices=("A", "B", "C", "D"))
    p.add_argument("--out", required=True)
    p.add_argument("--dump-similarity", metavar="DIR", help="also write S11, S22, S12 as CSV")

    p = sub.add_parser("encode", help="hash one modality with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modality", type=int, choices=(1, 2), required=True)
    p.add_argument("--rows", choices=("all", "train", "test"), default="all")
    p.add_argument("--format", choices=("text", "packed"), default="text")
    p.add_argument("--out", required=True)

    p = sub.add_parser("retrieve", help="rank database codes for each query code")
    p.add_argument("--database", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="MAP per scenario, direction and bits")
    _add_common(p, _DATA_FLAGS, _SPLIT_FLAGS, _TRAIN_FLAGS, _EVAL_FLAGS)
    _add_train_extras(p)
    p.add_argument("--checkpoint", action="append",
                   help="evaluate saved checkpoints instead of training (repeatable)")
    p.add_argument("--data", help="dataset directory (default: synthetic from the config)")
    p.add_argument("--out", dest="output", default=None)

    p = sub.add_parser("sweep", help="evaluate a grid of one parameter")
    _add_common(p, _DATA_FLAGS, _SPLIT_FLAGS, _TRAIN_FLAGS, _EVAL_FLAGS)
    _add_train_extras(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--data")
    p.add_argument("--out", dest="output", default=None)

    p = sub.add_parser("ablate", help="compare the full model with its ablations")
    _add_common(p, _DATA_FLAGS, _SPLIT_FLAGS, _TRAIN_FLAGS, _EVAL_FLAGS)
    _add_train_extras(p)
    p.add_argument("--variants", default=",".join(ABLATIONS))
    p.add_argument("--data")
    p.add_argument("--out", dest="output", default=None)
    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = _resolve(args)
    ds = generate_synthetic(replace(cfg.data, seed=cfg.seed))
    out = save_dataset(ds, args.out)
    write_provenance(cfg, out)
    print(f"wrote {ds.n} instances, {ds.attributes.c} categories to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _resolve(args)
    ds = load_dataset(args.data)
    split = make_split(ds, args.scenario, seen_fraction=cfg.seen_fraction,
                       mask_fraction=cfg.mask_fraction, seed=cfg.seed,
                       test_fraction=cfg.test_fraction)
    save_split(args.out, split)
    print(f"scenario {split.scenario}: {len(split.train)} train, {len(split.test)} test, "
          f"{len(split.masked)} masked")
    return EXIT_OK


def _single_bits(cfg: ExperimentConfig, args) -> int:
    if args.bits is not None and len(cfg.bits) != 1:
        raise UsageError("train takes a single --bits value")
    return cfg.bits[0] if args.bits is not None else cfg.trainer.bits


def cmd_train(args) -> int:
    cfg = _resolve(args)
    ds = load_dataset(args.data)
    if args.split:
        split = load_split(args.split)
    else:
        split = make_split(ds, args.scenario or cfg.scenarios[0],
                           seen_fraction=cfg.seen_fraction, mask_fraction=cfg.mask_fraction,
                           seed=cfg.seed, test_fraction=cfg.test_fraction)
    trainer = replace(cfg.trainer, bits=_single_bits(cfg, args), seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_similarity:
        save_similarity(build_all(ds, split, ABLATION_SIMILARITY[trainer.ablation]),
                        args.dump_similarity)

    log_path = out / "train_log.jsonl"
    header = {"epoch": 0, "ablation": trainer.ablation,
              "similarity": ABLATION_SIMILARITY[trainer.ablation]}
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps(header) + "\n")

        def progress(epoch, loss):
            log.write(json.dumps({"epoch": epoch, **loss.as_dict()}) + "\n")
            log.flush()

        model = fit(ds, split, trainer, progress)
    save_checkpoint(out, model, ds)
    write_provenance(replace(cfg, trainer=trainer), out)
    first, last = model.state.history[0].total, model.state.history[-1].total
    print(f"trained {trainer.iterations} epochs: loss {first:.6g} -> {last:.6g}")
    return EXIT_OK


def cmd_encode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    codes = hash_all(ds, model)[args.modality - 1]
    if args.rows != "all":
        codes = codes[list(getattr(model.split, args.rows))]
    if args.format == "packed":
        save_codes_packed(args.out, codes)
    else:
        save_codes_text(args.out, codes)
    print(f"wrote {codes.shape[0]} codes of {codes.shape[1]} bits to {args.out}")
    return EXIT_OK


def _read_codes(path) -> HashCodes:
    with open(path, "rb") as fh:
        magic = fh.read(len(PACKED_MAGIC))
    if magic == PACKED_MAGIC:
        return load_codes_packed(path)
    return HashCodes.from_codes(load_codes_text(path))


def cmd_retrieve(args) -> int:
    db = _read_codes(args.database)
    queries = _read_codes(args.queries)
    if queries.bits != db.bits:
        raise DatasetError(f"query codes have {queries.bits} bits, database {db.bits}")
    ranked = HammingIndex(db).rank(queries.codes, args.k)
    atomic_write(args.out, "".join(" ".join(map(str, row)) + "\n" for row in ranked))
    print(f"ranked {db.n} items for {queries.n} queries")
    return EXIT_OK


def _experiment_cfg(args) -> ExperimentConfig:
    extra = {"data_path": args.data} if getattr(args, "data", None) else {}
    return _resolve(args, **extra)


def cmd_evaluate(args) -> int:
    cfg = _experiment_cfg(args)
    if not args.checkpoint:
        rows = run_experiment(cfg)
        _print_rows(rows, ("scenario", "direction", "bits"))
        return EXIT_OK
    if not args.data:
        raise UsageError("evaluating checkpoints needs --data")
    ds = load_dataset(args.data)
    out = Path(cfg.output)
    write_provenance(cfg, out)
    rows, reports = [], []
    for k, path in enumerate(args.checkpoint):
        if not Path(path).is_dir():
            raise DatasetError(f"checkpoint {path} does not exist")
        model = load_checkpoint(path)
        for rep in evaluate_model(ds, model, cfg.relevance, cfg.map_at_k):
            reports.append(json.loads(rep.to_json()) | {"checkpoint": str(path)})
            rows.append({"scenario": rep.scenario, "direction": rep.direction,
                         "bits": rep.bits, "repeat": k, "map": rep.map})
    keys = ("scenario", "direction", "bits")
    summary = aggregate(rows, keys)
    atomic_write(out / "results.csv", rows_to_csv(summary, [*keys, "map", "std", "runs"]))
    atomic_write(out / "results_runs.csv", rows_to_csv(rows, [*keys, "repeat", "map"]))
    atomic_write(out / "reports.json", json.dumps(reports, indent=1) + "\n")
    _print_rows(summary, keys)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    cfg = _experiment_cfg(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.param, values)
    _print_rows(rows, ("param", "value", "scenario", "direction", "bits"))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _experiment_cfg(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    rows = ablate(cfg, variants)
    _print_rows(rows, ("ablation", "scenario", "direction", "bits"))
    return EXIT_OK


def _print_rows(rows, keys) -> None:
    for row in rows:
        label = " ".join(str(row[k]) for k in keys)
        print(f"{label}  MAP {row['map']:.4f} (std {row['std']:.4f}, {row['runs']} runs)")


COMMANDS = {
    "generate": cmd_generate,
    "split": cmd_split,
    "train": cmd_train,
    "encode": cmd_encode,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, UndefinedAPError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CZHashError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
