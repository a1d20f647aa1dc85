"""Labeled trace datasets: ingestion, synthetic generators, splitting.

File formats
------------
CSV (long): header ``sample_id,label,t,x1[,x2,...]``, one row per
(sample, step); steps 0..H must be contiguous per sample and every sample
must share the same horizon and dimension.  Sample order follows first
appearance in the file.

JSON (wide): ``{"H": int, "d": int, "samples": [{"label": int,
"values": [[...d floats...] per step]}]}``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .stl import Signal

__all__ = [
    "LabeledDataset",
    "load_dataset",
    "save_dataset",
    "gen_naval",
    "gen_plateau_waves",
    "split",
    "dataset_hash",
]


@dataclass
class LabeledDataset:
    """Signals shaped (n, H+1, d) with integer class labels 1..K."""

    signals: np.ndarray
    labels: np.ndarray
    class_names: dict | None = None
    sample_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.signals.ndim != 3:
            raise ValueError("signals must be a (n, H+1, d) array")
        if self.signals.shape[0] != self.labels.shape[0]:
            raise ValueError("one label per sample required")
        if self.signals.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.isfinite(self.signals).all():
            raise ValueError("signal values must be finite")
        if (self.labels < 1).any():
            raise ValueError("labels are 1-based positive integers")
        if not self.sample_ids:
            self.sample_ids = list(range(self.signals.shape[0]))
        present = set(np.unique(self.labels).tolist())
        missing = [c for c in self.classes if c not in present]
        if missing:
            warnings.warn(f"classes {missing} have no samples", stacklevel=2)

    @property
    def n_samples(self) -> int:
        return self.signals.shape[0]

    @property
    def horizon(self) -> int:
        return self.signals.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.signals.shape[2]

    @property
    def classes(self) -> list:
        return list(range(1, int(self.labels.max()) + 1))

    def signal(self, i: int) -> Signal:
        return Signal(self.signals[i])

    def class_counts(self) -> dict:
        return {c: int((self.labels == c).sum()) for c in self.classes}


def dataset_hash(ds: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.signals).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    h.update(str(ds.signals.shape).encode())
    return h.hexdigest()[:16]


def _load_csv(path) -> LabeledDataset:
    by_sample: dict = {}
    order: list = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 4 or header[:3] != ["sample_id", "label", "t"]:
            raise ValueError(
                f"{path}: expected header sample_id,label,t,x1[,x2,...], got {header}"
            )
        d = len(header) - 3
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + d:
                raise ValueError(f"{path}:{row_no}: expected {3 + d} cells, got {len(row)}")
            sid = row[0]
            try:
                label = int(row[1])
            except ValueError:
                raise ValueError(f"{path}:{row_no}: label {row[1]!r} is not an integer") from None
            if label < 1:
                raise ValueError(f"{path}:{row_no}: labels are 1-based, got {label}")
            try:
                t = int(row[2])
            except ValueError:
                raise ValueError(f"{path}:{row_no}: step {row[2]!r} is not an integer") from None
            try:
                vals = [float(x) for x in row[3:]]
            except ValueError:
                raise ValueError(f"{path}:{row_no}: non-numeric signal cell in {row[3:]}") from None
            if sid not in by_sample:
                by_sample[sid] = {"label": label, "rows": {}}
                order.append(sid)
            rec = by_sample[sid]
            if rec["label"] != label:
                raise ValueError(f"{path}:{row_no}: sample {sid} has conflicting labels")
            if t in rec["rows"]:
                raise ValueError(f"{path}:{row_no}: duplicate step {t} for sample {sid}")
            rec["rows"][t] = vals
    if not order:
        raise ValueError(f"{path}: no samples")
    horizons = {sid: max(by_sample[sid]["rows"]) for sid in order}
    H = horizons[order[0]]
    for sid in order:
        if horizons[sid] != H:
            raise ValueError(
                f"{path}: ragged trace lengths: sample {sid} has horizon "
                f"{horizons[sid]}, expected {H}"
            )
        steps = sorted(by_sample[sid]["rows"])
        if steps != list(range(H + 1)):
            raise ValueError(f"{path}: sample {sid} is missing steps (need 0..{H})")
    signals = np.array(
        [[by_sample[sid]["rows"][t] for t in range(H + 1)] for sid in order], dtype=float
    )
    labels = np.array([by_sample[sid]["label"] for sid in order], dtype=int)
    return LabeledDataset(signals, labels, sample_ids=list(order))


def _load_json(path) -> LabeledDataset:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        H, d, samples = int(doc["H"]), int(doc["d"]), doc["samples"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: expected keys H, d, samples") from exc
    signals, labels = [], []
    for i, rec in enumerate(samples):
        vals = np.asarray(rec["values"], dtype=float)
        if vals.shape != (H + 1, d):
            raise ValueError(
                f"{path}: sample {i} has shape {vals.shape}, expected {(H + 1, d)}"
            )
        signals.append(vals)
        labels.append(int(rec["label"]))
    if not signals:
        raise ValueError(f"{path}: no samples")
    return LabeledDataset(np.stack(signals), np.array(labels))


def load_dataset(path) -> LabeledDataset:
    """Load a dataset from the CSV or JSON schema (chosen by extension)."""
    text = str(path)
    if text.endswith(".json"):
        return _load_json(path)
    return _load_csv(path)


def save_dataset(ds: LabeledDataset, path):
    """Write the CSV schema.  Floats use repr so files round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "t"] + [f"x{j}" for j in range(1, ds.dim + 1)])
        for i in range(ds.n_samples):
            sid = ds.sample_ids[i] if ds.sample_ids else i
            for t in range(ds.horizon + 1):
                writer.writerow(
                    [sid, int(ds.labels[i]), t] + [repr(float(v)) for v in ds.signals[i, t]]
                )


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def gen_naval(n_per_family: int = 50, seed: int = 0) -> LabeledDataset:
    """Synthetic harbor-approach trajectories, 61 steps of (x, y) positions.

    Three families over a mirrored sea chart (open sea at low x, harbor at
    high x, an island region at low y around mid-channel):

    * normal (class 1): steady run from the open sea into the harbor, y stays
      in the shipping lane.
    * veer (class 2, abnormal): dips toward the island (low y) mid-way, then
      continues to the harbor.
    * return (class 2, abnormal): heads out part-way with lane-normal y, then
      turns around and ends in the open sea.

    The lane band, island depth and turn-back point are separated by margins
    far wider than the bounded noise, so the families are exactly separable.
    """
    if n_per_family < 1:
        raise ValueError("n_per_family must be >= 1")
    rng = np.random.default_rng(seed)
    H = 60
    t = np.arange(H + 1, dtype=float)

    def lane_y(n):
        phase = rng.uniform(0.0, 2 * np.pi, size=(n, 1))
        wobble = 1.2 * np.sin(2 * np.pi * t[None, :] / 20.0 + phase)
        return 30.0 + wobble + rng.uniform(-0.3, 0.3, size=(n, H + 1))

    def noise(n):
        return rng.uniform(-0.4, 0.4, size=(n, H + 1))

    def inbound_x(n):
        t0 = rng.uniform(2.0, 6.0, size=(n, 1))
        u = (t[None, :] - t0) / (48.0 - t0)
        return 2.5 + 39.0 * _smoothstep(u) + noise(n)

    n = n_per_family
    # normal: straight to the harbor
    x_norm = inbound_x(n)
    y_norm = lane_y(n)
    # veer: island dip in y on the way to the harbor
    x_veer = inbound_x(n)
    y_veer = lane_y(n)
    t_dip = rng.uniform(24.0, 32.0, size=(n, 1))
    depth = 30.0 - rng.uniform(19.5, 20.5, size=(n, 1))
    bump = np.clip(1.0 - np.abs(t[None, :] - t_dip) / 9.0, 0.0, None)
    y_veer = y_veer - depth * np.sin(0.5 * np.pi * bump)
    # return: part-way out, then back to the open sea
    t_turn = rng.uniform(26.0, 30.0, size=(n, 1))
    x_peak = rng.uniform(22.5, 24.0, size=(n, 1))
    up = _smoothstep((t[None, :] - 3.0) / (t_turn - 3.0))
    down = _smoothstep((t[None, :] - t_turn) / (50.0 - t_turn))
    x_ret = 2.5 + (x_peak - 2.5) * up - (x_peak - 2.5) * down + noise(n)
    y_ret = lane_y(n)

    signals = np.concatenate(
        [
            np.stack([x_norm, y_norm], axis=2),
            np.stack([x_veer, y_veer], axis=2),
            np.stack([x_ret, y_ret], axis=2),
        ]
    )
    labels = np.concatenate([np.full(n, 1), np.full(n, 2), np.full(n, 2)])
    return LabeledDataset(signals, labels, class_names={1: "normal", 2: "abnormal"})


# plateau-wave building blocks: peak value 4, trough 0, unit slope
_TRI = [0, 1, 2, 3, 4, 3, 2, 1]
_PLATEAU2 = [0, 1, 2, 3, 4, 4, 3, 2, 1]
_PLATEAU3 = [0, 1, 2, 3, 4, 4, 4, 3, 2, 1]


def gen_plateau_waves(seed: int = 0, noise: float = 0.01) -> LabeledDataset:
    """300 one-dimensional traces of 15 steps for the nested-operator study.

    Class 1 (100 samples): triangle waves.  Class 2 (200): plateaued triangle
    variants holding the peak for 2 and 3 steps (50 each), plus constant
    traces at the lower and upper bound (50 each).  Every wave family is
    sampled at all phase shifts; uniform noise in [-noise, noise] is added.
    """
    rng = np.random.default_rng(seed)
    H = 14
    k = np.arange(H + 1)

    def waves(pattern, count):
        pat = np.asarray(pattern, dtype=float)
        phases = np.arange(count) % len(pat)
        return pat[(k[None, :] + phases[:, None]) % len(pat)]

    blocks = [
        (waves(_TRI, 100), 1),
        (waves(_PLATEAU2, 50), 2),
        (waves(_PLATEAU3, 50), 2),
        (np.zeros((50, H + 1)), 2),
        (np.full((50, H + 1), 4.0), 2),
    ]
    values = np.concatenate([b for b, _ in blocks])
    labels = np.concatenate([np.full(len(b), c) for b, c in blocks])
    values = values + rng.uniform(-noise, noise, size=values.shape)
    return LabeledDataset(values[:, :, None], labels)


def split(ds: LabeledDataset, train_fraction: float, seed: int = 0):
    """Seeded stratified split into (train, test).

    Per-class train counts follow largest-remainder apportionment of
    ``train_fraction * n_total`` so the overall fraction is met and class
    proportions are preserved within one sample.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n_total = ds.n_samples
    n_train = int(round(train_fraction * n_total))
    classes = sorted(np.unique(ds.labels).tolist())
    counts = {c: int((ds.labels == c).sum()) for c in classes}
    quota = {c: train_fraction * counts[c] for c in classes}
    base = {c: int(np.floor(quota[c])) for c in classes}
    leftover = n_train - sum(base.values())
    if leftover > 0:
        by_remainder = sorted(classes, key=lambda c: (-(quota[c] - base[c]), c))
        for c in by_remainder[:leftover]:
            base[c] += 1
    elif leftover < 0:
        by_remainder = sorted(classes, key=lambda c: (quota[c] - base[c], c))
        for c in by_remainder[:(-leftover)]:
            base[c] -= 1
    train_idx, test_idx = [], []
    for c in classes:
        idx = np.flatnonzero(ds.labels == c)
        perm = rng.permutation(len(idx))
        take = base[c]
        train_idx.extend(idx[perm[:take]].tolist())
        test_idx.extend(idx[perm[take:]].tolist())
    if not train_idx or not test_idx:
        raise ValueError("split fraction produces an empty train or test part")
    train_idx.sort()
    test_idx.sort()

    def take(indices):
        return LabeledDataset(
            ds.signals[indices],
            ds.labels[indices],
            class_names=ds.class_names,
            sample_ids=[ds.sample_ids[i] for i in indices],
        )

    return take(train_idx), take(test_idx)
