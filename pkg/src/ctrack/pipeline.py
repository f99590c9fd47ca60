"""Warm-up, per-epoch selection and masked training, end to end.

:class:`SelectionEngine` is the single place masks are computed. The online
run and the offline ``select`` replay of a prediction log both feed it the
same float32-quantized epoch records, so they agree bit for bit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctrack.datasets import (
    FEATURE_MAGIC,
    LOGIT_MAGIC,
    PROB_MAGIC,
    TEST,
    TRAIN,
    BlobConfig,
    Dataset,
    PredLogWriter,
    gen_blobs,
    load_csv,
)
from ctrack.errors import ConfigError, NumericFailureError
from ctrack.evalx import accuracy_from_probs, format_report, selection_metrics
from ctrack.gmm1d import EmConfig
from ctrack.noise import NoiseSpec, apply_noise
from ctrack.selectors import (
    FINE_EM,
    AumState,
    DistState,
    aum_select,
    ct_select,
    fine_select,
    gmm_select,
    union,
)
from ctrack.trainer import MLP, OptConfig, Trainer, ce_losses
from ctrack.trajectory import GapHistory

log = logging.getLogger(__name__)

BASE_METHODS = ("gmm", "aum", "dist", "fine")
METHODS = ("ct", *BASE_METHODS, *(f"{m}+ct" for m in BASE_METHODS), "none")


def parse_method(method: str) -> tuple[str | None, bool]:
    """Split ``"gmm+ct"`` into ``("gmm", True)``; ``"ct"`` gives ``(None, True)``."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if method == "none":
        return None, False
    if method == "ct":
        return None, True
    base, _, ct = method.partition("+")
    return base, bool(ct)


@dataclass
class SelectorConfig:
    method: str = "gmm+ct"
    alpha: float = 0.01
    tau: float = 0.5
    dist_lambda: float = 0.9
    noise_rate: float | None = None
    k_slack: float = 0.0
    warmup: int = 30
    gmm_em: EmConfig = field(default_factory=EmConfig)
    fine_em: EmConfig = FINE_EM
    fine_tau: float = 0.5
    ct_every: int = 1

    def __post_init__(self):
        base, ct = parse_method(self.method)
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"select.alpha must lie in (0, 1), got {self.alpha}")
        if not (0.0 < self.tau < 1.0):
            raise ConfigError(f"select.tau must lie in (0, 1), got {self.tau}")
        if not (0.0 <= self.dist_lambda < 1.0):
            raise ConfigError(f"select.lambda must lie in [0, 1), got {self.dist_lambda}")
        if base == "aum":
            if self.noise_rate is None:
                raise ConfigError("select.noise_rate is required for AUM selection")
            if not (0.0 < 1.0 - self.noise_rate - self.k_slack <= 1.0):
                raise ConfigError("select.noise_rate + select.k_slack must lie in [0, 1)")
        if ct and self.warmup < 2:
            raise ConfigError("select.warmup must be >= 2 when CT is used (Z needs two epochs)")
        if self.warmup < 0:
            raise ConfigError("select.warmup must be non-negative")
        if self.ct_every < 1:
            raise ConfigError("select.ct_every must be a positive number of epochs")


@dataclass
class EpochSelection:
    mask: np.ndarray
    active: bool
    z_min: np.ndarray | None = None
    avg_margin: np.ndarray | None = None
    posterior: np.ndarray | None = None
    base_mask: np.ndarray | None = None
    ct_mask: np.ndarray | None = None


class SelectionEngine:
    """Consumes one record per epoch and returns the mask for the next epoch."""

    def __init__(self, labels, n_classes: int, cfg: SelectorConfig, capacity_epochs: int):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n = self.labels.size
        self.n_classes = n_classes
        self.cfg = cfg
        self.base, self.use_ct = parse_method(cfg.method)
        self.store = GapHistory(self.labels, n_classes, capacity_epochs) if self.use_ct else None
        self.aum = AumState(self.labels) if self.base == "aum" else None
        self.dist = DistState(self.labels, n_classes, cfg.dist_lambda) if self.base == "dist" else None
        self.epochs_seen = 0
        self.last: EpochSelection | None = None

    @property
    def needs_logits(self) -> bool:
        return self.aum is not None

    @property
    def needs_features(self) -> bool:
        return self.base == "fine"

    def observe(self, epoch: int, probs, logits=None, features=None) -> EpochSelection:
        if epoch != self.epochs_seen:
            raise ConfigError(f"engine expected epoch {self.epochs_seen}, got {epoch}")
        probs = np.asarray(probs, dtype=np.float32)
        ids = np.arange(self.n)
        if self.store is not None:
            self.store.record_epoch(epoch, probs, ids)
        dist_mask = None
        if self.dist is not None:
            _, dist_mask = self.dist.step(probs, ids)
        if self.aum is not None:
            if logits is None:
                raise ConfigError("AUM selection needs logits for every epoch")
            self.aum.update(np.asarray(logits, dtype=np.float32), ids)
        self.epochs_seen += 1

        sel = EpochSelection(mask=np.ones(self.n, dtype=bool), active=False)
        if self.aum is not None:
            sel.avg_margin = self.aum.average()
        if self.epochs_seen < self.cfg.warmup or self.base is None and not self.use_ct:
            self.last = sel
            return sel

        masks = []
        if self.base == "gmm":
            losses = ce_losses(probs, self.labels)
            sel.base_mask, sel.posterior = gmm_select(losses, self.cfg.tau, self.cfg.gmm_em, return_posterior=True)
        elif self.base == "aum":
            sel.base_mask = aum_select(sel.avg_margin, self.cfg.noise_rate, self.cfg.k_slack)
        elif self.base == "dist":
            sel.base_mask = dist_mask
        elif self.base == "fine":
            if features is None:
                raise ConfigError("FINE selection needs features")
            feats = np.asarray(features, dtype=np.float32).astype(np.float64)
            sel.base_mask, sel.posterior = fine_select(
                feats, self.labels, self.cfg.fine_tau, self.cfg.fine_em, return_posterior=True
            )
        if sel.base_mask is not None:
            masks.append(sel.base_mask)
        if self.use_ct:
            prev = self.last
            due = (self.epochs_seen - self.cfg.warmup) % self.cfg.ct_every == 0
            if due or prev is None or prev.ct_mask is None:
                sel.z_min = self.store.snapshot_z()
                sel.ct_mask = ct_select(self.store, self.cfg.alpha, z=sel.z_min)
            else:
                # between evaluations the last CT decision stands
                sel.z_min, sel.ct_mask = prev.z_min, prev.ct_mask
            masks.append(sel.ct_mask)
        sel.mask = union(masks)
        sel.active = True
        self.last = sel
        return sel


def replay(engine: SelectionEngine, probs_log, logits_log=None, features_log=None) -> list[EpochSelection]:
    """Drive an engine from stored logs, one epoch record at a time."""
    out = []
    for t in range(probs_log.n_epochs):
        logits = None if logits_log is None else logits_log.probs[t]
        feats = None
        if features_log is not None:
            hit = np.flatnonzero(features_log.epochs == probs_log.epochs[t])
            if hit.size:
                feats = features_log.probs[hit[0]]
        out.append(engine.observe(int(probs_log.epochs[t]), probs_log.probs[t], logits, feats))
    return out


def write_mask_csv(path, sel: EpochSelection) -> None:
    cols = ["sample_id", "selected"]
    extra = [("z_min", sel.z_min), ("avg_margin", sel.avg_margin), ("gmm_posterior", sel.posterior)]
    extra = [(name, val) for name, val in extra if val is not None]
    cols += [name for name, _ in extra]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(sel.mask.size):
            w.writerow([i, int(sel.mask[i])] + [repr(float(val[i])) for _, val in extra])


def read_mask_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["sample_id"]) for r in rows], dtype=np.int64)
    mask = np.zeros(ids.size, dtype=bool)
    mask[ids] = [bool(int(r["selected"])) for r in rows]
    return mask


# ------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    seed: int = 0
    data_source: str = "blobs"
    data_path: str | None = None
    blobs: BlobConfig = field(default_factory=BlobConfig)
    noise: NoiseSpec | None = None
    hidden: tuple = (128, 128)
    zero_output: bool = False
    opt: OptConfig = field(default_factory=lambda: OptConfig(epochs=40, warmup_epochs=10))
    select: SelectorConfig = field(default_factory=SelectorConfig)
    write_logs: bool = True


@dataclass
class ExperimentResult:
    summary: dict
    epochs: list
    final: EpochSelection
    clean_mask: np.ndarray | None
    artifacts: dict


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_source == "csv":
        if not cfg.data_path:
            raise ConfigError("data.path is required when data.source = csv")
        ds = load_csv(cfg.data_path)
    elif cfg.data_source == "blobs":
        ds = gen_blobs(cfg.blobs)
    else:
        raise ConfigError(f"data.source must be 'blobs' or 'csv', got {cfg.data_source!r}")
    if cfg.noise is not None and cfg.noise.rate > 0:
        train = np.flatnonzero(ds.splits == TRAIN)
        clean = ds.clean_labels if ds.clean_labels is not None else ds.noisy_labels.copy()
        noisy, _ = apply_noise(cfg.noise, clean[train], ds.n_classes,
                               ds.features[train])
        labels = clean.copy()
        labels[train] = noisy
        ds = Dataset(ds.features, labels, clean, ds.splits, ds.ids, ds.hard)
    return ds


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Train with per-epoch selection; write artifacts under ``out_dir`` if given."""
    ds = load_dataset(cfg)
    train = ds.subset(TRAIN)
    test = ds.subset(TEST)
    if train.n_samples < 2:
        raise ConfigError("training split needs at least 2 samples")
    k = max(ds.n_classes, 2)
    x, y = train.features, train.noisy_labels
    clean_mask = train.clean_mask

    model = MLP([train.n_features, *cfg.hidden, k], seed=cfg.opt.seed, zero_output=cfg.zero_output)
    trainer = Trainer(model, cfg.opt)
    engine = SelectionEngine(y, k, cfg.select, capacity_epochs=max(cfg.opt.epochs, 1))

    artifacts = {}
    writers = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.write_logs:
            artifacts["predlog"] = out / "predictions.ctpl"
            writers["probs"] = PredLogWriter(artifacts["predlog"], y, k, PROB_MAGIC)
            writers["logits"] = PredLogWriter(out / "logits.ctlg", y, k, LOGIT_MAGIC)
            artifacts["logits"] = out / "logits.ctlg"
            if engine.needs_features:
                artifacts["features"] = out / "features.ctfe"
                writers["features"] = PredLogWriter(artifacts["features"], y, model.sizes[-2], FEATURE_MAGIC)

    mask = np.ones(y.size, dtype=bool)
    history = []
    sel = engine.last
    try:
        for epoch in range(cfg.opt.epochs):
            if epoch < cfg.select.warmup:
                mask = np.ones(y.size, dtype=bool)
            stats = trainer.train_epoch(x, y, mask, epoch)
            with np.errstate(over="ignore"):
                probs32 = stats.probs.astype(np.float32)
                logits32 = stats.logits.astype(np.float32)
                feats32 = stats.features.astype(np.float32)
            if not (np.isfinite(logits32).all() and np.isfinite(feats32).all()):
                raise NumericFailureError(f"epoch {epoch}: logits or features overflow float32")
            if "probs" in writers:
                writers["probs"].append(epoch, probs32)
                writers["logits"].append(epoch, logits32)
            if "features" in writers:
                writers["features"].append(epoch, feats32)
            sel = engine.observe(epoch, probs32, logits32, feats32)
            mask = sel.mask
            row = {"epoch": epoch, "train_loss": stats.mean_loss, "selection_active": int(sel.active),
                   "selected": int(mask.sum())}
            if clean_mask is not None:
                rep = selection_metrics(mask, clean_mask)
                row.update(precision=rep.precision, recall=rep.recall, f1=rep.f1)
            if test.n_samples:
                _, tp, _ = model.forward(test.features)
                row["test_acc"] = accuracy_from_probs(tp, test.clean_labels if test.clean_labels is not None else test.noisy_labels)
            history.append(row)
    except NumericFailureError:
        log.error("numeric failure; logs flushed through the last completed epoch")
        raise
    finally:
        for w in writers.values():
            w.close()

    if sel is None:
        sel = EpochSelection(mask=np.ones(y.size, dtype=bool), active=False)
    summary = {
        "method": cfg.select.method,
        "seed": cfg.seed,
        "n_train": int(y.size),
        "n_test": int(test.n_samples),
        "epochs": cfg.opt.epochs,
        "warmup": cfg.select.warmup,
        "alpha": cfg.select.alpha,
        "selected": int(sel.mask.sum()),
    }
    if clean_mask is not None:
        rep = selection_metrics(sel.mask, clean_mask)
        summary.update(precision=rep.precision, recall=rep.recall, f1=rep.f1,
                       clean_count=rep.clean_count, noise_rate_actual=1.0 - float(clean_mask.mean()))
    if history and "test_acc" in history[-1]:
        summary["test_acc"] = history[-1]["test_acc"]

    if out_dir is not None:
        out = Path(out_dir)
        artifacts["mask"] = out / "mask.csv"
        write_mask_csv(artifacts["mask"], sel)
        artifacts["report"] = out / "metrics.txt"
        artifacts["report"].write_text(format_report(summary))
        artifacts["epochs"] = out / "epochs.csv"
        write_epoch_csv(artifacts["epochs"], history)
    return ExperimentResult(summary=summary, epochs=history, final=sel, clean_mask=clean_mask,
                            artifacts=artifacts)


def write_epoch_csv(path, rows) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0].keys())
    for r in rows:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
