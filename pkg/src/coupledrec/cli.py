"""Command-line entry point: ``coupledrec {ingest,synth,train,eval,predict}``.

Every command accepts ``--config FILE`` holding ``key = value`` lines; flags
given on the command line override values from the file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import data as data_mod
from .estimators import FEATURE_VARIANTS, from_checkpoint, make_recommender
from .evaluation import DEFAULT_CUTOFFS, compare_models, evaluate_model, reports_to_tsv
from .exceptions import CoupledRecError, UnknownInterval, UnknownUser, VocabMismatch
from .features import NORMALIZE_MODES, normalize_features, read_features_file, write_features_file
from .models import read_checkpoint_file
from .synth import make_planted_corpus, planted_hyperparams
from .training import TrainConfig

logger = logging.getLogger("coupledrec")

# settings written next to a checkpoint; eval and predict reuse its feature settings
SIDECAR = "run.cfg"

VARIANTS = ("dcf", "dcfa", "mf", "vbpr", "cp", "pitf", "cmtf", "mp", "rand")


class CLIError(Exception):
    """User-facing argument or input problem; reported as one line, exit 1."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    if not path:
        return {}
    if not os.path.exists(path):
        raise CLIError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CLIError(f"{path}:{line_no}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CLIError(f"not a boolean: {value!r}")


def _parse_optional_int(value):
    if value is None or str(value).strip().lower() in ("", "none"):
        return None
    return int(value)


def resolve(args, config: dict, name: str, default=None, convert=None):
    """CLI value if given, else config-file value, else ``default``."""
    value = getattr(args, name, None)
    if value is None:
        value = config.get(name)
        if value is not None and convert is not None:
            try:
                value = convert(value)
            except ValueError as exc:
                raise CLIError(f"bad value for {name}: {value!r} ({exc})") from None
    return default if value is None else value


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _float_list(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


_CONFIG_TYPES = {
    "mse_zeros_per_positive": _parse_optional_int,
    "eval_sample": _parse_optional_int,
}


PRESETS = ("default", "planted")


def train_config(args, config: dict, seed: int, variant: str = "dcfa") -> TrainConfig:
    preset = resolve(args, config, "preset", "default")
    if preset not in PRESETS:
        raise CLIError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    defaults = TrainConfig()
    if preset == "planted":
        defaults = defaults.replace(**planted_hyperparams(variant))
    values = {}
    for name in TrainConfig.field_names():
        if name == "seed":
            continue
        default = getattr(defaults, name)
        conv = _CONFIG_TYPES.get(name) or (type(default) if default is not None else str)
        values[name] = resolve(args, config, name, default, conv)
    try:
        return TrainConfig(seed=seed, **values)
    except ValueError as exc:
        raise CLIError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args, config) -> int:
    path = resolve(args, config, "interactions")
    if not path:
        raise CLIError("--interactions is required")
    if not os.path.exists(path):
        raise CLIError(f"interactions file not found: {path}")
    out = resolve(args, config, "out", "split")
    seed = resolve(args, config, "seed", 0, int)
    k = resolve(args, config, "k_core", 5, int)
    min_ts = resolve(args, config, "min_timestamp", None, int)
    interval = resolve(args, config, "interval_seconds", data_mod.WEEK_SECONDS, int)
    ratios = _float_list(resolve(args, config, "ratios", "0.8,0.1,0.1"))

    interactions = data_mod.read_interactions(path)
    n_raw = len(interactions)
    interactions = data_mod.filter_min_timestamp(interactions, min_ts)
    interactions = data_mod.kcore_filter(interactions, k)
    if not interactions:
        raise CLIError(f"no interactions left after filtering (k-core={k})")
    grid = data_mod.build_time_grid(interactions, interval)
    dataset = data_mod.build_dataset(interactions, grid)
    split = data_mod.split_dataset(dataset, ratios, seed)
    data_mod.save_split(split, out, n_raw=n_raw, n_kept=len(interactions), n_triples=len(dataset),
                        k_core=k, min_timestamp="" if min_ts is None else min_ts)
    for key, value in data_mod.read_manifest(os.path.join(out, "manifest.txt")).items():
        print(f"{key}={value}")
    return 0


def cmd_synth(args, config) -> int:
    out = resolve(args, config, "out", "synth")
    seed = resolve(args, config, "seed", 0, int)
    try:
        corpus = make_planted_corpus(
            n_users=resolve(args, config, "users", 200, int),
            n_items=resolve(args, config, "items", 300, int),
            n_intervals=resolve(args, config, "intervals", 8, int),
            n_groups=resolve(args, config, "groups", 4, int),
            density=resolve(args, config, "density", 0.005, float),
            n_features=resolve(args, config, "feature_dim", 32, int),
            feature_noise=resolve(args, config, "feature_noise", 0.5, float),
            off_group=resolve(args, config, "off_group", 0.05, float),
            seasonality=resolve(args, config, "seasonality", 2.0, float),
            seed=seed,
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    os.makedirs(out, exist_ok=True)
    data_mod.write_interactions(corpus.interactions, os.path.join(out, "interactions.tsv"))
    write_features_file(corpus.features, os.path.join(out, "features.bin"), corpus.item_ids)
    with open(os.path.join(out, "groups.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("kind\tid\tgroup\n")
        for u, g in enumerate(corpus.user_groups):
            fh.write(f"user\tu{u:04d}\t{g}\n")
        for raw, g in zip(corpus.item_ids, corpus.item_groups):
            fh.write(f"item\t{raw}\t{g}\n")
    print(f"interactions={len(corpus.interactions)}")
    print(f"out={out}")
    return 0


def _load_features(args, config, split, variant, saved=None):
    saved = saved or {}
    path = resolve(args, config, "features", saved.get("features"))
    if variant in FEATURE_VARIANTS and not path:
        raise CLIError(f"--features is required for variant {variant}")
    if not path or variant not in FEATURE_VARIANTS:
        return None
    if not os.path.exists(path):
        raise CLIError(f"features file not found: {path}")
    mode = resolve(args, config, "normalize", saved.get("normalize", "per_dim_standardize"))
    if mode not in NORMALIZE_MODES:
        raise CLIError(f"unknown normalization {mode!r}; choose from {', '.join(NORMALIZE_MODES)}")
    F = read_features_file(path, split.train.item_vocab)
    return normalize_features(F, mode)


def _load_split(args, config):
    path = resolve(args, config, "split")
    if not path:
        raise CLIError("--split is required")
    if not os.path.exists(os.path.join(path, "manifest.txt")):
        raise CLIError(f"split directory not found or incomplete: {path}")
    return data_mod.load_split(path)


def _headline(report) -> str:
    parts = []
    if 50 in report.recall:
        parts.append(f"Recall@50={report.recall[50]:.4f}")
    if 5 in report.ndcg:
        parts.append(f"NDCG@5={report.ndcg[5]:.4f}")
    return " ".join(parts)


def cmd_train(args, config) -> int:
    variant = resolve(args, config, "variant", "dcfa")
    if variant not in VARIANTS:
        raise CLIError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    split = _load_split(args, config)
    F = _load_features(args, config, split, variant)
    seed = resolve(args, config, "seed", 0, int)
    cfg = train_config(args, config, seed, variant)
    out = resolve(args, config, "out", "model")
    os.makedirs(out, exist_ok=True)
    settings = {"variant": variant, **cfg.to_dict()}
    if F is not None:
        settings["features"] = os.path.abspath(resolve(args, config, "features"))
        settings["normalize"] = resolve(args, config, "normalize", "per_dim_standardize")
    with open(os.path.join(out, SIDECAR), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{k} = {'' if v is None else v}\n" for k, v in settings.items()))

    est = make_recommender(variant, **cfg.to_dict())
    est.fit(split.train, F, validation=split.validation)
    est.save(os.path.join(out, "model.ckpt"))
    with open(os.path.join(out, "trace.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(est.trace_.to_tsv())
    cutoffs = _int_list(resolve(args, config, "cutoffs", DEFAULT_CUTOFFS))
    report = est.evaluate(split.validation, cutoffs)
    print(f"variant={variant} iterations={len(est.trace_)}")
    print("validation metrics:")
    print(report)
    if _headline(report):
        print(_headline(report))
    return 0


def _checkpoint_specs(values) -> list[tuple[str | None, str]]:
    specs = []
    for item in values:
        for part in str(item).split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, path = part.partition("=")
            specs.append((name, path) if sep else (None, part))
    return specs


def _restore(path, split, args, config):
    if not os.path.exists(path):
        raise CLIError(f"checkpoint not found: {path}")
    ckpt = read_checkpoint_file(path)
    if ckpt.vocab_digest != split.train.vocab_digest():
        raise VocabMismatch(f"{path} was trained on a different user/item vocabulary")
    if ckpt.shape[:2] != (split.train.n_users, split.train.n_items):
        raise VocabMismatch(f"{path} has shape {ckpt.shape}, split has "
                            f"{(split.train.n_users, split.train.n_items, split.train.n_intervals)}")
    sidecar = os.path.join(os.path.dirname(os.path.abspath(path)), SIDECAR)
    saved = read_config(sidecar) if os.path.exists(sidecar) else {}
    F = _load_features(args, config, split, ckpt.variant, saved)
    return ckpt, from_checkpoint(ckpt, split.train, F)


def cmd_eval(args, config) -> int:
    split = _load_split(args, config)
    ckpts = args.checkpoint or _checkpoint_specs([config["checkpoint"]] if "checkpoint" in config else [])
    specs = _checkpoint_specs(ckpts)
    if not specs:
        raise CLIError("at least one --checkpoint is required")
    on = resolve(args, config, "on", "test")
    if on not in ("test", "validation"):
        raise CLIError("--on must be 'test' or 'validation'")
    cutoffs = _int_list(resolve(args, config, "cutoffs", DEFAULT_CUTOFFS))
    exclude_train = _parse_bool(resolve(args, config, "exclude_train", True))
    include_cold = _parse_bool(resolve(args, config, "include_cold", False))
    reference = resolve(args, config, "reference")
    holdout = getattr(split, on)

    reports = {}
    for name, path in specs:
        ckpt, est = _restore(path, split, args, config)
        name = name or ckpt.variant
        if name in reports:
            name = f"{name}:{os.path.basename(path)}"
        reports[name] = evaluate_model(est.scorer(), split.train, holdout, cutoffs,
                                       exclude_train=exclude_train, include_cold=include_cold)
    if reference is not None and reference not in reports:
        raise CLIError(f"reference {reference!r} is not one of {', '.join(reports)}")
    table = compare_models(reports, reference)
    print(table)
    for name, rep in reports.items():
        line = _headline(rep)
        if line:
            print(f"{name}: {line}")
    out = resolve(args, config, "out")
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "metrics.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(reports_to_tsv(reports))
        with open(os.path.join(out, "comparison.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table.to_tsv())
    return 0


def cmd_predict(args, config) -> int:
    split = _load_split(args, config)
    path = resolve(args, config, "checkpoint")
    if isinstance(path, list):
        path = path[0]
    if not path:
        raise CLIError("--checkpoint is required")
    _, est = _restore(path, split, args, config)
    user = resolve(args, config, "user")
    if user is None:
        raise CLIError("--user is required")
    p = split.train.user_vocab.get(user)
    if p is None:
        raise UnknownUser(user)
    r = resolve(args, config, "interval", 0, int)
    if not 0 <= r < split.train.n_intervals:
        raise UnknownInterval(r)
    n = resolve(args, config, "n", 10, int)
    exclude_train = _parse_bool(resolve(args, config, "exclude_train", False))
    scores = est.score_items(p, r)
    for q in est.recommend(p, r, n, exclude_train=exclude_train):
        print(f"{split.train.item_vocab.raw(q)}\t{scores[q]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    for name in TrainConfig.field_names():
        if name == "seed":
            continue
        default = getattr(defaults, name)
        conv = _CONFIG_TYPES.get(name) or type(default)
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=conv,
                       help=f"default {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupledrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="interaction log -> indexed train/validation/test split")
    _add_common(p)
    p.add_argument("--interactions", help="tab-separated user, item, epoch-seconds file")
    p.add_argument("--k-core", dest="k_core", type=int, help="minimum records per user and item (default 5)")
    p.add_argument("--min-timestamp", dest="min_timestamp", type=int)
    p.add_argument("--interval-seconds", dest="interval_seconds", type=int, help="default one week")
    p.add_argument("--ratios", help="train,validation,test (default 0.8,0.1,0.1)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a planted-structure synthetic corpus and item features")
    _add_common(p)
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--intervals", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--feature-noise", dest="feature_noise", type=float)
    p.add_argument("--off-group", dest="off_group", type=float)
    p.add_argument("--seasonality", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one model variant on a split")
    _add_common(p)
    p.add_argument("--split", help="directory written by ingest")
    p.add_argument("--variant", help=f"one of {', '.join(VARIANTS)} (default dcfa)")
    p.add_argument("--features", help="item feature file (binary, or .tsv)")
    p.add_argument("--normalize", help=f"one of {', '.join(NORMALIZE_MODES)}")
    p.add_argument("--cutoffs", help="comma-separated cutoffs for the final report")
    p.add_argument("--preset", help="hyperparameter defaults: default or planted, "
                                    "tuned for synth corpora")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on validation or test")
    _add_common(p)
    p.add_argument("--split")
    p.add_argument("--checkpoint", action="append", help="[name=]path; repeatable")
    p.add_argument("--features")
    p.add_argument("--normalize")
    p.add_argument("--on", help="test (default) or validation")
    p.add_argument("--cutoffs")
    p.add_argument("--reference", help="model name to compute relative improvements against")
    p.add_argument("--include-cold", dest="include_cold", action="store_const", const=True)
    p.add_argument("--no-exclude-train", dest="exclude_train", action="store_const", const=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-n items for one user and interval")
    _add_common(p)
    p.add_argument("--split")
    p.add_argument("--checkpoint")
    p.add_argument("--features")
    p.add_argument("--normalize")
    p.add_argument("--user", help="raw user id")
    p.add_argument("--interval", type=int)
    p.add_argument("-n", "--n", type=int)
    p.add_argument("--exclude-train", dest="exclude_train", action="store_const", const=True,
                   help="skip items the user bought in train")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = read_config(args.config)
        return args.func(args, config)
    except (CLIError, CoupledRecError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
