"""INI experiment configuration.

One section per module::

    [experiment]  seed
    [data]        source (blobs|csv), path, n_classes, n_features, per_class,
                  spread, sigma, hard_fraction, hard_sigma_mult, val_fraction,
                  test_fraction, seed
    [noise]       kind (none|symmetric|asymmetric|instance), rate,
                  group_size, mapping ("0:1, 1:2"), seed
    [model]       hidden ("128, 128"), zero_output, seed
    [train]       lr_schedule ("0:0.02, 80:0.002"), momentum, weight_decay,
                  batch_size, epochs, renormalize_mask
    [select]      method, alpha, tau, lambda, noise_rate, k_slack, warmup,
                  em_max_iter, em_tol, em_reg_covar, fine_tau, ct_every
    [output]      write_logs

Sub-seeds default to values derived from ``experiment.seed``: data and
model use the seed itself, noise uses ``seed + 1000``. An explicit
``seed`` key in a section wins.
"""

from __future__ import annotations

import configparser
from dataclasses import replace

from ctrack.datasets import BlobConfig
from ctrack.errors import ConfigError, CTError
from ctrack.gmm1d import EmConfig
from ctrack.noise import NoiseSpec
from ctrack.pipeline import ExperimentConfig, SelectorConfig
from ctrack.trainer import OptConfig

NOISE_SEED_OFFSET = 1000

SCHEMA = {
    "experiment": {"seed": int},
    "data": {
        "source": str, "path": str, "n_classes": int, "n_features": int, "per_class": int,
        "spread": float, "sigma": float, "hard_fraction": float, "hard_sigma_mult": float,
        "val_fraction": float, "test_fraction": float, "seed": int,
    },
    "noise": {"kind": str, "rate": float, "group_size": int, "mapping": str, "seed": int},
    "model": {"hidden": str, "zero_output": bool, "seed": int},
    "train": {
        "lr_schedule": str, "momentum": float, "weight_decay": float, "batch_size": int,
        "epochs": int, "renormalize_mask": bool,
    },
    "select": {
        "method": str, "alpha": float, "tau": float, "lambda": float, "noise_rate": float,
        "k_slack": float, "warmup": int, "em_max_iter": int, "em_tol": float,
        "em_reg_covar": float, "fine_tau": float, "ct_every": int,
    },
    "output": {"write_logs": bool},
}

# reference recipe: alpha 0.01, warm-up 30, momentum 0.9, weight decay 1e-3
DEFAULTS = {
    "experiment": {"seed": "0"},
    "data": {"source": "blobs"},
    "noise": {"kind": "none", "rate": "0"},
    "model": {"hidden": "128, 128", "zero_output": "false"},
    "train": {"lr_schedule": "0:0.02, 80:0.002", "momentum": "0.9", "weight_decay": "1e-3",
              "batch_size": "128", "epochs": "150", "renormalize_mask": "false"},
    "select": {"method": "gmm+ct", "alpha": "0.01", "tau": "0.5", "lambda": "0.9",
               "k_slack": "0", "warmup": "30"},
    "output": {"write_logs": "true"},
}

_BOOLS = {"1": True, "true": True, "yes": True, "on": True,
          "0": False, "false": False, "no": False, "off": False}


def _convert(section, key, raw):
    kind = SCHEMA[section][key]
    try:
        if kind is bool:
            return _BOOLS[raw.strip().lower()]
        return kind(raw.strip())
    except (KeyError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _pairs(section, key, raw, kt, vt):
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        a, sep, b = item.partition(":")
        if not sep:
            raise ConfigError(f"{section}.{key}: expected 'a:b' items, got {item!r}")
        try:
            out.append((kt(a), vt(b)))
        except ValueError:
            raise ConfigError(f"{section}.{key}: bad item {item!r}") from None
    return out


def read_config(path=None, overrides=None) -> dict:
    """Merged ``{section: {key: typed value}}`` from defaults, ``path`` and overrides.

    ``overrides`` maps ``"section.key"`` to a string value, as from the CLI.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = _convert(section, key, raw)
    return out


def build_experiment(values: dict) -> ExperimentConfig:
    try:
        return _build(values)
    except ConfigError:
        raise
    except CTError as exc:
        raise ConfigError(str(exc)) from None


def _build(values: dict) -> ExperimentConfig:
    seed = values["experiment"]["seed"]
    data = dict(values.get("data", {}))
    source = data.pop("source")
    path = data.pop("path", None)
    data.setdefault("seed", seed)
    blobs = BlobConfig(**data)

    nz = dict(values.get("noise", {}))
    noise = None
    if nz.get("kind", "none") != "none" and nz.get("rate", 0.0) > 0:
        mapping = None
        if "mapping" in nz:
            mapping = dict(_pairs("noise", "mapping", nz["mapping"], int, int))
        noise = NoiseSpec(nz["kind"], nz["rate"], seed=nz.get("seed", seed + NOISE_SEED_OFFSET),
                          mapping=mapping, group_size=nz.get("group_size"))

    model = values["model"]
    try:
        hidden = tuple(int(h) for h in model["hidden"].split(",") if h.strip())
    except ValueError:
        raise ConfigError(f"model.hidden: expected comma-separated widths, got {model['hidden']!r}") from None

    tr = values["train"]
    sel = values["select"]
    em = EmConfig()
    em = replace(em, **{k[3:]: sel[k] for k in ("em_max_iter", "em_tol", "em_reg_covar") if k in sel})
    select = SelectorConfig(
        method=sel["method"], alpha=sel["alpha"], tau=sel["tau"], dist_lambda=sel["lambda"],
        noise_rate=sel.get("noise_rate"), k_slack=sel["k_slack"], warmup=sel["warmup"],
        gmm_em=em, fine_tau=sel.get("fine_tau", 0.5), ct_every=sel.get("ct_every", 1),
    )
    if select.warmup > tr["epochs"]:
        # the run simply never leaves warm-up; keep the optimizer config valid
        warm = tr["epochs"]
    else:
        warm = select.warmup
    opt = OptConfig(
        lr_schedule=_pairs("train", "lr_schedule", tr["lr_schedule"], int, float),
        momentum=tr["momentum"], weight_decay=tr["weight_decay"], batch_size=tr["batch_size"],
        epochs=tr["epochs"], warmup_epochs=warm, seed=model.get("seed", seed),
        renormalize_mask=tr["renormalize_mask"],
    )
    return ExperimentConfig(seed=seed, data_source=source, data_path=path, blobs=blobs, noise=noise,
                            hidden=hidden, zero_output=model["zero_output"], opt=opt, select=select,
                            write_logs=values["output"]["write_logs"])


def load_experiment(path=None, overrides=None) -> ExperimentConfig:
    return build_experiment(read_config(path, overrides))


def with_seed(values: dict, seed: int) -> dict:
    """Copy of ``values`` with a new experiment seed; derived sub-seeds follow it."""
    out = {s: dict(kv) for s, kv in values.items()}
    out["experiment"]["seed"] = seed
    return out
