"""Synthetic blobs, the dataset CSV schema, and binary per-epoch prediction logs.

Prediction log layout, little-endian::

    magic   4 bytes   b"CTPL" (probabilities) or b"CTLG" (logits)
    version u32       1
    N       u64
    K       u32       columns per row
    T       u32       number of epoch records
    labels  N x u32
    T records of { epoch u32, N*K float32 row-major }

Records are appended one per epoch, so T in the header is patched when a
writer is closed.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctrack.errors import FormatError, InvalidInputError

PROB_MAGIC = b"CTPL"
LOGIT_MAGIC = b"CTLG"
FEATURE_MAGIC = b"CTFE"
MAGICS = (PROB_MAGIC, LOGIT_MAGIC, FEATURE_MAGIC)
VERSION = 1
_HEADER = struct.Struct("<4sIQII")
HEADER_SIZE = _HEADER.size  # 24
PROB_SUM_TOL = 1e-3

TRAIN, VAL, TEST = "train", "val", "test"
SPLITS = (TRAIN, VAL, TEST)


@dataclass
class Dataset:
    features: np.ndarray
    noisy_labels: np.ndarray
    clean_labels: np.ndarray | None = None
    splits: np.ndarray = field(default=None)
    ids: np.ndarray = field(default=None)
    hard: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        n = self.features.shape[0]
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        if self.splits is None:
            self.splits = np.full(n, TRAIN, dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        for name in ("noisy_labels", "clean_labels", "splits", "ids", "hard"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise InvalidInputError(f"{name} has length {len(arr)}, expected {n}")
        bad = set(self.splits.tolist()) - set(SPLITS)
        if bad:
            raise InvalidInputError(f"unknown split tag(s) {sorted(bad)}")
        if n and self.noisy_labels.min() < 0:
            raise InvalidInputError("labels must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        ys = [self.noisy_labels]
        if self.clean_labels is not None:
            ys.append(self.clean_labels)
        return int(max(y.max(initial=-1) for y in ys)) + 1

    @property
    def clean_mask(self) -> np.ndarray | None:
        if self.clean_labels is None:
            return None
        return self.clean_labels == self.noisy_labels

    def subset(self, split: str) -> "Dataset":
        idx = np.flatnonzero(self.splits == split)
        return self.take(idx)

    def take(self, idx) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            noisy_labels=self.noisy_labels[idx],
            clean_labels=None if self.clean_labels is None else self.clean_labels[idx],
            splits=self.splits[idx],
            ids=self.ids[idx],
            hard=None if self.hard is None else self.hard[idx],
        )


@dataclass
class BlobConfig:
    n_classes: int = 4
    n_features: int = 16
    per_class: int = 1000
    spread: float = 6.0
    sigma: float = 1.0
    hard_fraction: float = 0.0
    hard_sigma_mult: float = 3.0
    val_fraction: float = 0.0
    test_fraction: float = 0.0
    seed: int = 0


def class_centers(n_classes: int, n_features: int, spread: float, rng) -> np.ndarray:
    """Centers at distance ``spread`` from the origin.

    With ``n_classes <= n_features`` the directions are orthonormal, so every
    pair of centers is ``spread * sqrt(2)`` apart.
    """
    if n_classes <= n_features:
        q, _ = np.linalg.qr(rng.standard_normal((n_features, n_classes)))
        return spread * q.T
    v = rng.standard_normal((n_classes, n_features))
    return spread * v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_blobs(cfg: BlobConfig) -> Dataset:
    """Gaussian class blobs with an optional inflated-variance hard subpopulation."""
    if cfg.n_classes < 2 or cfg.n_features < 2:
        raise InvalidInputError("gen_blobs needs at least 2 classes and 2 features")
    if cfg.per_class < 1:
        raise InvalidInputError(f"per_class must be positive, got {cfg.per_class}")
    if not (0.0 <= cfg.hard_fraction <= 1.0) or cfg.hard_sigma_mult <= 0 or cfg.sigma <= 0:
        raise InvalidInputError("invalid hard_fraction, hard_sigma_mult or sigma")
    if cfg.val_fraction < 0 or cfg.test_fraction < 0 or cfg.val_fraction + cfg.test_fraction >= 1:
        raise InvalidInputError("val_fraction + test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(cfg.seed)
    centers = class_centers(cfg.n_classes, cfg.n_features, cfg.spread, rng)
    n_hard = int(round(cfg.hard_fraction * cfg.per_class))
    xs, ys, hard = [], [], []
    for c in range(cfg.n_classes):
        is_hard = np.zeros(cfg.per_class, dtype=bool)
        is_hard[rng.permutation(cfg.per_class)[:n_hard]] = True
        scale = np.where(is_hard, cfg.sigma * cfg.hard_sigma_mult, cfg.sigma)
        xs.append(centers[c] + scale[:, None] * rng.standard_normal((cfg.per_class, cfg.n_features)))
        ys.append(np.full(cfg.per_class, c))
        hard.append(is_hard)
    x, y, hard = np.concatenate(xs), np.concatenate(ys), np.concatenate(hard)
    order = rng.permutation(y.size)
    x, y, hard = x[order], y[order], hard[order]

    splits = np.full(y.size, TRAIN, dtype=object)
    n_test = int(round(cfg.test_fraction * y.size))
    n_val = int(round(cfg.val_fraction * y.size))
    splits[:n_test] = TEST
    splits[n_test : n_test + n_val] = VAL
    return Dataset(features=x, noisy_labels=y.copy(), clean_labels=y, splits=splits, hard=hard)


# --------------------------------------------------------------------- CSV

def save_csv(path, ds: Dataset, clean_mask: bool = False) -> None:
    """Write ``id, split, [clean_label,] noisy_label, [hard,] [clean,] f0..``."""
    cols = ["id", "split"]
    if ds.clean_labels is not None:
        cols.append("clean_label")
    cols.append("noisy_label")
    if ds.hard is not None:
        cols.append("hard")
    if clean_mask and ds.clean_labels is not None:
        cols.append("clean")
    cols += [f"f{j}" for j in range(ds.n_features)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(ds.n_samples):
            row = [int(ds.ids[i]), ds.splits[i]]
            if ds.clean_labels is not None:
                row.append(int(ds.clean_labels[i]))
            row.append(int(ds.noisy_labels[i]))
            if ds.hard is not None:
                row.append(int(ds.hard[i]))
            if clean_mask and ds.clean_labels is not None:
                row.append(int(ds.clean_labels[i] == ds.noisy_labels[i]))
            row += [repr(float(v)) for v in ds.features[i]]
            w.writerow(row)


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: missing header row", line=1) from None
        header = [h.strip() for h in header]
        for required in ("id", "split", "noisy_label"):
            if required not in header:
                raise FormatError(f"{path}: missing required column {required!r}", line=1)
        fcols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
        fcols.sort(key=lambda h: int(h[1:]))
        if [int(h[1:]) for h in fcols] != list(range(len(fcols))):
            raise FormatError(f"{path}: feature columns must be f0..f{{D-1}} without gaps", line=1)
        pos = {h: j for j, h in enumerate(header)}
        ids, splits, noisy, clean, hard, feats = [], [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno
                )
            try:
                ids.append(int(row[pos["id"]]))
                splits.append(row[pos["split"]].strip())
                noisy.append(int(row[pos["noisy_label"]]))
                if "clean_label" in pos:
                    clean.append(int(row[pos["clean_label"]]))
                if "hard" in pos:
                    hard.append(bool(int(row[pos["hard"]])))
                feats.append([float(row[pos[h]]) for h in fcols])
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno) from None
    n = len(ids)
    try:
        return Dataset(
            features=np.asarray(feats, dtype=np.float64).reshape(n, len(fcols)),
            noisy_labels=np.asarray(noisy, dtype=np.int64),
            clean_labels=np.asarray(clean, dtype=np.int64) if "clean_label" in pos else None,
            splits=np.asarray(splits, dtype=object),
            ids=np.asarray(ids, dtype=np.int64),
            hard=np.asarray(hard, dtype=bool) if "hard" in pos else None,
        )
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------- prediction logs

@dataclass
class PredictionLog:
    labels: np.ndarray
    probs: np.ndarray  # [T, N, K] float32
    epochs: np.ndarray | None = None
    magic: bytes = PROB_MAGIC

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 3 or self.probs.shape[1] != self.labels.size:
            raise InvalidInputError(
                f"probs must have shape [T, {self.labels.size}, K], got {self.probs.shape}"
            )
        if self.epochs is None:
            self.epochs = np.arange(self.probs.shape[0], dtype=np.uint32)
        self.epochs = np.asarray(self.epochs, dtype=np.uint32)
        if self.magic not in MAGICS:
            raise InvalidInputError(f"unknown log magic {self.magic!r}")
        if self.magic == PROB_MAGIC and self.probs.size:
            sums = self.probs.sum(axis=2, dtype=np.float64)
            if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
                raise InvalidInputError("probability log rows must sum to 1 within 1e-3")

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def n_epochs(self) -> int:
        return self.probs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PredictionLog):
            return NotImplemented
        return (
            self.magic == other.magic
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.epochs, other.epochs)
            and self.probs.shape == other.probs.shape
            and self.probs.tobytes() == other.probs.tobytes()
        )


class PredLogWriter:
    """Append-only writer: one record per epoch, header count patched on close."""

    def __init__(self, path, labels, n_cols: int, magic: bytes = PROB_MAGIC):
        self.path = Path(path)
        self.labels = np.asarray(labels, dtype="<u4")
        self.n_cols = int(n_cols)
        self.magic = magic
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(magic, VERSION, self.labels.size, self.n_cols, 0))
        self._fh.write(self.labels.tobytes())

    def append(self, epoch: int, rows) -> None:
        rows = np.ascontiguousarray(rows, dtype="<f4")
        if rows.shape != (self.labels.size, self.n_cols):
            raise InvalidInputError(
                f"record shape {rows.shape} does not match ({self.labels.size}, {self.n_cols})"
            )
        self._fh.write(struct.pack("<I", epoch))
        self._fh.write(rows.tobytes())
        self.count += 1
        self._patch_count()

    def _patch_count(self):
        self._fh.seek(4 + 4 + 8 + 4)
        self._fh.write(struct.pack("<I", self.count))
        self._fh.seek(0, os.SEEK_END)
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._patch_count()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_predlog(path, log: PredictionLog) -> None:
    with PredLogWriter(path, log.labels, log.n_classes, log.magic) as w:
        for t in range(log.n_epochs):
            w.append(int(log.epochs[t]), log.probs[t])


def read_predlog(path, expect_magic: bytes | None = None) -> PredictionLog:
    data = Path(path).read_bytes()
    return parse_predlog(data, expect_magic, name=str(path))


def parse_predlog(data: bytes, expect_magic: bytes | None = None, name: str = "<bytes>") -> PredictionLog:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"{name}: truncated header, {len(data)} of {HEADER_SIZE} bytes", offset=len(data))
    magic, version, n, k, t = _HEADER.unpack_from(data, 0)
    if magic not in MAGICS:
        raise FormatError(f"{name}: bad magic {magic!r}", offset=0)
    if expect_magic is not None and magic != expect_magic:
        raise FormatError(f"{name}: expected magic {expect_magic!r}, found {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{name}: unsupported version {version}", offset=4)
    off = HEADER_SIZE
    need = off + 4 * n
    if len(data) < need:
        raise FormatError(f"{name}: truncated label block", offset=len(data))
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=off).copy()
    off = need
    rec = 4 + 4 * n * k
    expected = off + t * rec
    if len(data) < expected:
        done = (len(data) - off) // rec if rec else 0
        raise FormatError(
            f"{name}: truncated at epoch record {done} of {t}", offset=off + done * rec
        )
    if len(data) > expected:
        raise FormatError(f"{name}: {len(data) - expected} trailing bytes", offset=expected)
    epochs = np.empty(t, dtype=np.uint32)
    probs = np.empty((t, n, k), dtype=np.float32)
    for r in range(t):
        epochs[r] = struct.unpack_from("<I", data, off)[0]
        probs[r] = np.frombuffer(data, dtype="<f4", count=n * k, offset=off + 4).reshape(n, k)
        off += rec
    return PredictionLog(labels=labels, probs=probs, epochs=epochs, magic=magic)


def predlog_bytes(log: PredictionLog) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(log.magic, VERSION, log.n_samples, log.n_classes, log.n_epochs))
    buf.write(np.asarray(log.labels, dtype="<u4").tobytes())
    for t in range(log.n_epochs):
        buf.write(struct.pack("<I", int(log.epochs[t])))
        buf.write(np.ascontiguousarray(log.probs[t], dtype="<f4").tobytes())
    return buf.getvalue()
