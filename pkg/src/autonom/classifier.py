"""Flow-level binary classifier: a linear max-margin model trained with Pegasos.

Labels are +1 (malicious) and -1 (benign). A margin of exactly zero counts as
malicious.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kernels import pegasos_epochs

MALICIOUS = 1
BENIGN = -1

FEATURE_NAMES = (
    "duration", "total_bytes", "total_packets", "mean_iat", "src_port", "dst_port",
    "syn", "ack", "fin", "rst", "psh", "urg",
)
CSV_COLUMNS = FEATURE_NAMES + ("failed_conn", "label")
_PORT_COLUMNS = {"src_port", "dst_port"}


class CSVFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    duration: float
    total_bytes: float
    total_packets: float
    mean_iat: float
    src_port: float
    dst_port: float
    syn: float = 0
    ack: float = 0
    fin: float = 0
    rst: float = 0
    psh: float = 0
    urg: float = 0
    failed_conn: float = 0
    label: int | None = None
    src_addr: str = ""

    @property
    def flag_counts(self) -> tuple[float, ...]:
        return (self.syn, self.ack, self.fin, self.rst, self.psh, self.urg)

    def features(self, include_failed: bool = False) -> np.ndarray:
        values = [getattr(self, name) for name in FEATURE_NAMES]
        if include_failed:
            values.append(self.failed_conn)
        return np.asarray(values, dtype=np.float64)


def feature_matrix(records: Sequence[FlowRecord], include_failed: bool = False) -> np.ndarray:
    width = len(FEATURE_NAMES) + int(include_failed)
    if not records:
        return np.empty((0, width))
    return np.vstack([r.features(include_failed) for r in records])


def label_vector(records: Sequence[FlowRecord]) -> np.ndarray:
    if any(r.label is None for r in records):
        raise ValueError("all records must be labeled")
    return np.asarray([r.label for r in records], dtype=np.float64)


# ---------------------------------------------------------------------------
# CSV


def load_csv(source: str | Path) -> list[FlowRecord]:
    """Read flow records. ``label`` may be absent (inference mode); a trailing
    ``src_addr`` column is accepted and kept on the record."""
    with open(source, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError("empty file") from None
        required = list(CSV_COLUMNS[:-1])
        if header[: len(required)] != required:
            missing = [c for c in required if c not in header]
            raise CSVFormatError(
                f"missing columns {missing}" if missing else f"columns out of order: {header}"
            )
        rest = header[len(required):]
        if rest not in ([], ["label"], ["src_addr"], ["label", "src_addr"]):
            raise CSVFormatError(f"unexpected trailing columns {rest}")
        records = []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"expected {len(header)} fields, got {len(row)}", rownum)
            records.append(_parse_row(dict(zip(header, row)), rownum))
    return records


def _parse_row(row: dict[str, str], rownum: int) -> FlowRecord:
    values: dict[str, object] = {}
    for name in CSV_COLUMNS[:-1]:
        try:
            value = float(row[name])
        except ValueError:
            raise CSVFormatError(f"{name} is not numeric: {row[name]!r}", rownum) from None
        if not math.isfinite(value) or value < 0:
            raise CSVFormatError(f"{name} must be finite and non-negative", rownum)
        if name in _PORT_COLUMNS and value > 65535:
            raise CSVFormatError(f"{name} out of port range", rownum)
        values[name] = value
    if "label" in row:
        raw = row["label"].strip()
        if raw not in ("0", "1"):
            raise CSVFormatError(f"label must be 0 or 1, got {raw!r}", rownum)
        values["label"] = MALICIOUS if raw == "1" else BENIGN
    if "src_addr" in row:
        values["src_addr"] = row["src_addr"]
    return FlowRecord(**values)


def write_csv(records: Iterable[FlowRecord], destination: str | Path, with_src: bool = False) -> None:
    header = list(CSV_COLUMNS) + (["src_addr"] if with_src else [])
    with open(destination, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for r in records:
            row = [repr(float(getattr(r, name))) for name in CSV_COLUMNS[:-1]]
            row.append("" if r.label is None else ("1" if r.label == MALICIOUS else "0"))
            if with_src:
                row.append(r.src_addr)
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Synthetic traffic

# Raw-unit location and spread of every feature; spreads are 10% of the
# centres so non-negativity clipping essentially never fires.
_CENTERS = np.array([30.0, 5.0e4, 400.0, 0.5, 4.0e4, 8.0e3, 20.0, 200.0, 20.0, 10.0, 100.0, 10.0])
_SPREADS = _CENTERS * 0.1
_DIRECTION = np.array([-1, 1, 1, -1, 1, -1, 1, -1, -1, 1, 1, 1], dtype=np.float64)
_DIRECTION /= np.linalg.norm(_DIRECTION)
# The noise component along the class axis is truncated to this many standard
# deviations, so any separation above twice this value is linearly separable.
TRUNCATION = 2.5


def _truncated_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    out = rng.standard_normal(size)
    bad = np.abs(out) > TRUNCATION
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > TRUNCATION
    return out


def _synth_features(rng: np.random.Generator, labels: np.ndarray, separation: float) -> np.ndarray:
    n = labels.shape[0]
    z = rng.standard_normal((n, _DIRECTION.size))
    along = z @ _DIRECTION
    z += np.outer(_truncated_normal(rng, n) - along, _DIRECTION)
    z += np.outer(labels * (separation / 2.0), _DIRECTION)
    raw = _CENTERS + _SPREADS * z
    raw = np.maximum(raw, 0.0)
    raw[:, 4:6] = np.minimum(raw[:, 4:6], 65535.0)
    return raw


def _records_from(raw: np.ndarray, labels: np.ndarray, failed: np.ndarray, src: Sequence[str]) -> list[FlowRecord]:
    out = []
    for row, lab, fc, addr in zip(raw, labels, failed, src):
        kwargs = dict(zip(FEATURE_NAMES, (float(v) for v in row)))
        out.append(FlowRecord(**kwargs, failed_conn=float(fc), label=int(lab), src_addr=addr))
    return out


def synth_dataset(seed: int, n: int, separation: float) -> list[FlowRecord]:
    """Balanced two-class Gaussian mixture.

    In the generator's latent space every class has unit within-class variance
    and the class means sit ``separation`` apart along a fixed direction. The
    latent space maps affinely onto raw feature units.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n) < n // 2, BENIGN, MALICIOUS)
    labels = rng.permutation(labels)
    raw = _synth_features(rng, labels, separation)
    failed = rng.poisson(0.5, size=n)
    src = [f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}" for i in range(n)]
    return _records_from(raw, labels, failed, src)


def synth_flow(
    rng: np.random.Generator, malicious: bool, separation: float, src_addr: str = ""
) -> FlowRecord:
    label = np.array([MALICIOUS if malicious else BENIGN])
    raw = _synth_features(rng, label, separation)
    return _records_from(raw, label, rng.poisson(0.5, size=1), [src_addr])[0]


# ---------------------------------------------------------------------------
# Scaling, training, prediction


def fit_scaler(records: Sequence[FlowRecord], include_failed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    if len(records) < 2:
        raise ValueError("empty-input: need at least 2 records to fit a scaler")
    X = feature_matrix(records, include_failed)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds[stds == 0] = 1.0
    return means, stds


@dataclass(frozen=True)
class TrainConfig:
    reg: float = 1e-3
    epochs: int = 50
    seed: int = 0
    project: bool = True
    include_failed: bool = False

    def __post_init__(self):
        if self.reg <= 0:
            raise ValueError("reg must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class Model:
    weights: tuple[float, ...]
    bias: float
    means: tuple[float, ...]
    stds: tuple[float, ...]
    version: int = 1
    trained_on: int = 0
    include_failed: bool = False

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (X - np.asarray(self.means)) / np.asarray(self.stds)

    def margins(self, records: Sequence[FlowRecord]) -> np.ndarray:
        Xs = self.scale(feature_matrix(records, self.include_failed))
        return Xs @ np.asarray(self.weights) + self.bias

    def with_version(self, version: int) -> "Model":
        return Model(self.weights, self.bias, self.means, self.stds, version, self.trained_on, self.include_failed)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "weights": list(self.weights),
            "bias": self.bias,
            "means": list(self.means),
            "stds": list(self.stds),
            "trainedOn": self.trained_on,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Model":
        weights = tuple(float(v) for v in data["weights"])
        means = tuple(float(v) for v in data["means"])
        stds = tuple(float(v) for v in data["stds"])
        if not len(weights) == len(means) == len(stds) or len(weights) not in (12, 13):
            raise ValueError("model vectors must all have length 12 (or 13 with failed_conn)")
        if any(s <= 0 for s in stds):
            raise ValueError("scaler stds must be positive")
        return cls(
            weights, float(data["bias"]), means, stds, int(data["version"]),
            int(data.get("trainedOn", 0)), len(weights) == 13,
        )


def save_model(model: Model, destination: str | Path) -> None:
    Path(destination).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(source: str | Path) -> Model:
    return Model.from_dict(json.loads(Path(source).read_text(encoding="utf-8")))


def apply_scaler(model: Model, record: FlowRecord) -> np.ndarray:
    return model.scale(record.features(model.include_failed))


def augment(Xs: np.ndarray) -> np.ndarray:
    """Append the constant column that carries the bias."""
    return np.hstack([Xs, np.ones((Xs.shape[0], 1))])


def hinge_objective(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, reg: float) -> float:
    return 0.5 * reg * float(w @ w) + float(np.maximum(0.0, 1.0 - y * (Xa @ w)).mean())


def hinge_subgradient(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, reg: float) -> np.ndarray:
    active = y * (Xa @ w) < 1.0
    return reg * w - (y[active, None] * Xa[active]).sum(axis=0) / Xa.shape[0]


def epoch_orders(seed: int, n: int, epochs: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)])


def pegasos_fit(Xa: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Returns the averaged iterate and the full-set objective after each epoch."""
    order = epoch_orders(config.seed, Xa.shape[0], config.epochs)
    _, w_avg, history = pegasos_epochs(Xa, y, config.reg, order, config.project)
    return w_avg, history


def train(records: Sequence[FlowRecord], config: TrainConfig = TrainConfig(), version: int = 1) -> Model:
    y = label_vector(records)
    if not ((y == MALICIOUS).any() and (y == BENIGN).any()):
        raise SingleClassError("single-class-input: training needs both labels")
    means, stds = fit_scaler(records, config.include_failed)
    Xs = (feature_matrix(records, config.include_failed) - means) / stds
    w, _ = pegasos_fit(augment(Xs), y, config)
    return Model(
        tuple(float(v) for v in w[:-1]),
        float(w[-1]),
        tuple(float(v) for v in means),
        tuple(float(v) for v in stds),
        version,
        len(records),
        config.include_failed,
    )


def predict(model: Model, record: FlowRecord) -> tuple[int, float]:
    margin = float(apply_scaler(model, record) @ np.asarray(model.weights) + model.bias)
    return (MALICIOUS if margin >= 0 else BENIGN), margin


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision_undefined: bool = False
    recall_undefined: bool = False

    @property
    def confusion(self) -> list[list[int]]:
        """Rows are actual (malicious, benign), columns predicted."""
        return [[self.tp, self.fn], [self.fp, self.tn]]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def evaluate(model: Model, records: Sequence[FlowRecord]) -> Metrics:
    if not records:
        raise ValueError("empty-input")
    y = label_vector(records)
    predicted = np.array([predict(model, r)[0] for r in records])
    return metrics_from(y, predicted)


def metrics_from(actual: np.ndarray, predicted: np.ndarray) -> Metrics:
    pos_a, pos_p = actual == MALICIOUS, predicted == MALICIOUS
    tp = int(np.sum(pos_a & pos_p))
    fp = int(np.sum(~pos_a & pos_p))
    tn = int(np.sum(~pos_a & ~pos_p))
    fn = int(np.sum(pos_a & ~pos_p))
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(
        (tp + tn) / total, precision, recall, f1, tp, fp, tn, fn,
        precision_undefined=(tp + fp == 0), recall_undefined=(tp + fn == 0),
    )


def consensus_classify(votes: Iterable[tuple[int, float]]) -> int:
    """Weighted majority over (label, weight) votes; an exact tie is malicious.

    Weights are summed exactly so the outcome depends only on their ratios.
    """
    votes = list(votes)
    if not votes:
        raise ValueError("empty-votes")
    malicious = benign = Fraction(0)
    for label, weight in votes:
        w = Fraction(weight)
        if w <= 0:
            raise ValueError("vote weights must be positive")
        if label == MALICIOUS:
            malicious += w
        else:
            benign += w
    return MALICIOUS if malicious >= benign else BENIGN
