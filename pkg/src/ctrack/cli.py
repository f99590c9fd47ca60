"""Command-line entry point: ``ctrack <subcommand> ...``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ctrack.config import build_experiment, read_config, with_seed
from ctrack.datasets import FEATURE_MAGIC, LOGIT_MAGIC, PROB_MAGIC, TRAIN, Dataset, load_csv, read_predlog, save_csv
from ctrack.errors import ConfigError, CTError, FormatError, InvalidInputError, NumericFailureError
from ctrack.evalx import format_report, selection_metrics
from ctrack.gmm1d import EmConfig
from ctrack.mk_trend import mk_batch, mk_threshold
from ctrack.noise import NoiseSpec, apply_noise
from ctrack.pipeline import (
    METHODS,
    SelectionEngine,
    SelectorConfig,
    load_dataset,
    read_mask_csv,
    replay,
    run_experiment,
    write_epoch_csv,
    write_mask_csv,
)

log = logging.getLogger("ctrack")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# flag dest -> config key; a flag left at None keeps the config value
OVERRIDES = {
    "seed": "experiment.seed",
    "data": "data.path",
    "method": "select.method",
    "alpha": "select.alpha",
    "tau": "select.tau",
    "lam": "select.lambda",
    "noise_rate": "select.noise_rate",
    "k_slack": "select.k_slack",
    "warmup": "select.warmup",
    "ct_every": "select.ct_every",
    "epochs": "train.epochs",
    "renormalize_mask": "train.renormalize_mask",
}


def _selector_flags(p, defaults=False):
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--method", default=d("gmm+ct"), help=f"one of {', '.join(METHODS)}")
    p.add_argument("--alpha", type=float, default=d(0.01))
    p.add_argument("--tau", type=float, default=d(0.5))
    p.add_argument("--lambda", dest="lam", type=float, default=d(0.9))
    p.add_argument("--noise-rate", type=float, default=None)
    p.add_argument("--k-slack", type=float, default=d(0.0))
    p.add_argument("--warmup", type=int, default=d(30))
    p.add_argument("--ct-every", type=int, default=d(1), help="re-evaluate CT every N epochs")


def _config_flags(p):
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--renormalize-mask", action="store_const", const="true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrack", description="Noisy-label sample selection toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a blobs dataset, apply noise, write CSV")
    _config_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("corrupt", help="inject label noise into the train split of a CSV dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", required=True, choices=["symmetric", "asymmetric", "instance"])
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group-size", type=int)

    for name, text in (("train", "train with online selection; write logs, mask and metrics"),
                       ("run", "generate data, train with selection, and evaluate")):
        p = sub.add_parser(name, help=text)
        _config_flags(p)
        _selector_flags(p)
        p.add_argument("--data", help="dataset CSV (sets data.source = csv)")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seeds", help="comma-separated seeds run in parallel processes")
        p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("select", help="compute a selection mask from a prediction log")
    p.add_argument("--log", required=True, help="probability log (.ctpl)")
    p.add_argument("--logits", help="logit log (.ctlg), needed for AUM")
    p.add_argument("--features-log", help="feature log (.ctfe), needed for FINE")
    _selector_flags(p, defaults=True)
    p.add_argument("--em-max-iter", type=int, default=EmConfig().max_iter)
    p.add_argument("--em-tol", type=float, default=EmConfig().tol)
    p.add_argument("--max-epochs", type=int, help="store capacity (default: epochs in the log)")
    p.add_argument("--out", required=True, help="mask CSV")
    p.add_argument("--dump-z", help="write sample_id,z_min CSV")

    p = sub.add_parser("evaluate", help="selection precision/recall/F1 of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--data", required=True, help="dataset CSV with clean_label column")
    p.add_argument("--epochs-csv", help="per-epoch metrics CSV to summarize")
    p.add_argument("--out", help="also write the report here")

    p = sub.add_parser("mk-test", help="Mann-Kendall trend test on a numeric series")
    p.add_argument("file", nargs="?", default="-", help="newline-separated values ('-' = stdin)")
    p.add_argument("--alpha", type=float, default=0.01)
    return ap


# ------------------------------------------------------------------ helpers

def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = val.strip()
    for dest, key in OVERRIDES.items():
        val = getattr(args, dest, None)
        if val is not None:
            out[key] = str(val)
    if getattr(args, "data", None):
        out["data.source"] = "csv"
    return out


def _seed_list(text) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None


def _train_dataset(path) -> Dataset:
    ds = load_csv(path)
    train = ds.subset(TRAIN)
    if train.clean_labels is None:
        raise ConfigError(f"{path}: evaluation needs a clean_label column")
    return train


# ------------------------------------------------------------- subcommands

def cmd_generate(args) -> int:
    cfg = build_experiment(read_config(args.config, _overrides(args)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(cfg)
    save_csv(out / "dataset.csv", ds, clean_mask=True)
    print(f"wrote {out / 'dataset.csv'} ({ds.n_samples} samples, {ds.n_classes} classes)")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    ds = load_csv(args.input)
    clean = ds.clean_labels if ds.clean_labels is not None else ds.noisy_labels.copy()
    train = np.flatnonzero(ds.splits == TRAIN)
    spec = NoiseSpec(args.kind, args.rate, seed=args.seed, group_size=args.group_size)
    k = ds.n_classes
    noisy, _ = apply_noise(spec, clean[train], k, ds.features[train])
    labels = clean.copy()
    labels[train] = noisy
    out = Dataset(ds.features, labels, clean, ds.splits, ds.ids, ds.hard)
    save_csv(args.output, out, clean_mask=True)
    print(f"flipped {int((labels != clean).sum())} of {train.size} training labels")
    return EXIT_OK


def _run_one(values: dict, out_dir: str) -> dict:
    cfg = build_experiment(values)
    res = run_experiment(cfg, out_dir)
    return res.summary


def _run_one_checked(values, out_dir):
    # workers return error text instead of raising unpicklable state
    try:
        return _run_one(values, out_dir), None
    except CTError as exc:
        return None, (type(exc).__name__, str(exc))


def cmd_train(args, generate=False) -> int:
    values = read_config(args.config, _overrides(args))
    build_experiment(values)  # fail fast on config errors
    out = Path(args.out_dir)
    seeds = _seed_list(args.seeds) if args.seeds else None
    if not seeds:
        if generate:
            out.mkdir(parents=True, exist_ok=True)
            save_csv(out / "dataset.csv", load_dataset(build_experiment(values)), clean_mask=True)
        summary = _run_one(values, str(out))
        sys.stdout.write(format_report(summary))
        return EXIT_OK

    jobs = [(with_seed(values, s), str(out / f"seed_{s}")) for s in seeds]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_run_one_checked, *zip(*jobs)))
    rows = []
    for s, (summary, err) in zip(seeds, results):
        if err is not None:
            name, msg = err
            if name == "NumericFailureError":
                raise NumericFailureError(f"seed {s}: {msg}")
            if name == "FormatError":
                raise FormatError(f"seed {s}: {msg}")
            raise ConfigError(f"seed {s}: {msg}")
        rows.append(summary)
    write_epoch_csv(out / "seeds.csv", rows)
    for key in ("precision", "recall", "f1", "test_acc"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            print(f"mean_{key}={float(np.mean(vals)):.6f}")
    print(f"seeds={','.join(map(str, seeds))}")
    return EXIT_OK


def cmd_select(args) -> int:
    probs = read_predlog(args.log, expect_magic=PROB_MAGIC)
    logits = read_predlog(args.logits, expect_magic=LOGIT_MAGIC) if args.logits else None
    feats = read_predlog(args.features_log, expect_magic=FEATURE_MAGIC) if args.features_log else None
    cfg = SelectorConfig(
        method=args.method, alpha=args.alpha, tau=args.tau, dist_lambda=args.lam,
        noise_rate=args.noise_rate, k_slack=args.k_slack, warmup=args.warmup, ct_every=args.ct_every,
        gmm_em=EmConfig(max_iter=args.em_max_iter, tol=args.em_tol),
    )
    engine = SelectionEngine(probs.labels, probs.n_classes, cfg,
                             capacity_epochs=args.max_epochs or max(probs.n_epochs, 1))
    if engine.needs_logits and logits is None:
        raise ConfigError(f"method {args.method} needs --logits")
    if engine.needs_features and feats is None:
        raise ConfigError(f"method {args.method} needs --features-log")
    sels = replay(engine, probs, logits, feats)
    if not sels:
        raise InvalidInputError(f"{args.log}: log holds no epochs")
    final = sels[-1]
    write_mask_csv(args.out, final)
    if args.dump_z:
        if final.z_min is None:
            z = engine.store.snapshot_z() if engine.store is not None and engine.epochs_seen >= 2 else None
        else:
            z = final.z_min
        if z is None:
            raise ConfigError("--dump-z needs a CT method and at least 2 epochs")
        with open(args.dump_z, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "z_min"])
            for i, v in enumerate(z):
                w.writerow([i, repr(float(v))])
    state = "active" if final.active else "warm-up (all samples kept)"
    print(f"selected {int(final.mask.sum())} of {final.mask.size} samples after "
          f"{probs.n_epochs} epochs; selection {state}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    train = _train_dataset(args.data)
    mask = read_mask_csv(args.mask)
    if mask.size != train.n_samples:
        raise InvalidInputError(f"mask has {mask.size} rows, training split has {train.n_samples}")
    rep = selection_metrics(mask, train.clean_mask).as_dict()
    if args.epochs_csv:
        with open(args.epochs_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and rows[-1].get("test_acc"):
            rep["test_acc"] = float(rows[-1]["test_acc"])
        rep["epochs"] = len(rows)
    text = format_report(rep)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def _read_series(src) -> list[float]:
    fh = sys.stdin if src == "-" else open(src)
    try:
        values = []
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise FormatError(f"{src}: not a number: {line!r}", line=lineno) from None
    finally:
        if fh is not sys.stdin:
            fh.close()
    return values


def cmd_mk_test(args) -> int:
    values = _read_series(args.file)
    if not (0.0 < args.alpha < 1.0):
        raise ConfigError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if len(values) < 2 or not all(math.isfinite(v) for v in values):
        raise InvalidInputError("mk-test needs at least 2 finite values")
    res = mk_batch(values)
    thr = mk_threshold(args.alpha)
    sys.stdout.write(format_report({
        "n": res.n, "S": res.s_stat, "Var": float(res.variance), "Z": float(res.z),
        "threshold": thr, "alpha": args.alpha, "pass": bool(res.z > thr),
    }))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "run": lambda a: cmd_train(a, generate=True),
    "select": cmd_select,
    "evaluate": cmd_evaluate,
    "mk-test": cmd_mk_test,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
