"""Cohort schema, CSV ingestion, synthetic cohorts and stratified splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cgmcl.errors import ConfigError, DataError, JoinError, ParseError, StratificationError

log = logging.getLogger(__name__)

DATQUANT_COLUMNS = ["S-R", "S-L", "AP-R", "AP-L", "PP-R", "PP-L",
                    "C-R", "C-L", "P/C-R", "P/C-L", "PA", "CA"]
MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}
DEFAULT_TRAIN_FRACTION = 300 / 412


@dataclass
class Cohort:
    patient_ids: list[str]
    image_features: np.ndarray
    clinical_features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    clinical_names: list[str] = field(default_factory=list)
    split: np.ndarray | None = None  # True marks a training patient
    rejected: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.patient_ids)
        if self.image_features.shape[0] != n or self.clinical_features.shape[0] != n \
                or self.labels.shape[0] != n:
            raise DataError("image, clinical and label rows are not aligned")
        if not self.clinical_names:
            self.clinical_names = [f"c_{j}" for j in range(self.clinical_features.shape[1])]

    @property
    def n(self) -> int:
        return len(self.patient_ids)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_mask(self) -> np.ndarray:
        if self.split is None:
            raise DataError("cohort has not been split")
        return self.split

    @property
    def test_mask(self) -> np.ndarray:
        return ~self.train_mask

    def one_hot(self) -> np.ndarray:
        Y = np.zeros((self.n, self.num_classes))
        Y[np.arange(self.n), self.labels] = 1.0
        return Y


@dataclass
class SyntheticSpec:
    n: int = 200
    num_classes: int = 2
    D: int = 16
    F: int = 12
    separation: float = 4.0
    correlation: float = 0.5
    noise: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("synthetic cohort needs at least 2 classes")
        if self.n < 4 * self.num_classes:
            raise ConfigError(f"n={self.n} must be at least 4 * num_classes")
        if self.D < 1 or self.F < 1:
            raise ConfigError("feature widths must be positive")
        if self.separation < 0 or self.noise < 0:
            raise ConfigError("separation and noise must be non-negative")
        if not 0.0 <= self.correlation <= 1.0:
            raise ConfigError("correlation must lie in [0, 1]")


def _directions(rng: np.random.Generator, latent: int, width: int) -> np.ndarray:
    """latent x width map with orthonormal rows when latent <= width."""
    G = rng.standard_normal((width, latent))
    if latent <= width:
        Q, _ = np.linalg.qr(G)
        return Q.T
    return G.T / np.sqrt(width)


def generate_synthetic(spec: SyntheticSpec) -> Cohort:
    """Class-structured two-modality cohort.

    Class centres are orthogonal with pairwise distance ``separation``. Each
    modality mixes a shared centre (weight ``correlation``) with a private
    one, so centre distances are the same in both modalities for any
    correlation. Noise is isotropic Gaussian with std ``noise``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K = spec.num_classes
    radius = spec.separation / math.sqrt(2.0)
    # latent layout: [shared | private image | private clinical], K dims each
    shared = np.zeros((K, 3 * K))
    shared[:, :K] = radius * np.eye(K)
    priv_I = np.zeros((K, 3 * K))
    priv_I[:, K:2 * K] = radius * np.eye(K)
    priv_C = np.zeros((K, 3 * K))
    priv_C[:, 2 * K:] = radius * np.eye(K)
    rho = spec.correlation
    centres_I = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * priv_I
    centres_C = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * priv_C

    labels = np.arange(spec.n) % K
    rng.shuffle(labels)
    M_I = _directions(rng, 3 * K, spec.D)
    M_C = _directions(rng, 3 * K, spec.F)
    image = centres_I[labels] @ M_I + spec.noise * rng.standard_normal((spec.n, spec.D))
    clinical = centres_C[labels] @ M_C + spec.noise * rng.standard_normal((spec.n, spec.F))
    width = len(str(spec.n - 1))
    return Cohort(
        patient_ids=[f"P{i:0{width}d}" for i in range(spec.n)],
        image_features=image,
        clinical_features=clinical,
        labels=labels.astype(int),
        class_names=[f"class_{k}" for k in range(K)],
        clinical_names=[f"c_{j}" for j in range(spec.F)],
    )


def split_cohort(cohort: Cohort, train_fraction: float = DEFAULT_TRAIN_FRACTION,
                 seed: int = 0) -> Cohort:
    """Stratified split; the train count is round(fraction * n) unless the
    one-member-per-side floor of a tiny class forces a different total.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    counts = np.bincount(cohort.labels, minlength=cohort.num_classes)
    small = [cohort.class_names[k] for k, c in enumerate(counts) if c < 2]
    if small:
        raise StratificationError(f"classes with fewer than 2 members: {small}")

    target = int(round(train_fraction * cohort.n))
    target = min(max(target, cohort.num_classes), cohort.n - cohort.num_classes)
    quota = counts * train_fraction
    alloc = np.clip(np.floor(quota).astype(int), 1, counts - 1)
    # largest remainder, measured against the clipped allocation; a seat only
    # moves while every class stays within one member of its quota, so the
    # total can miss the target when the 1-member floors already overshoot
    while alloc.sum() < target:
        open_ = np.flatnonzero((alloc < counts - 1) & (alloc <= quota))
        if open_.size == 0:
            break
        alloc[open_[np.argmax((quota - alloc)[open_])]] += 1
    while alloc.sum() > target:
        open_ = np.flatnonzero((alloc > 1) & (alloc >= quota))
        if open_.size == 0:
            break
        alloc[open_[np.argmax((alloc - quota)[open_])]] -= 1

    split = np.zeros(cohort.n, dtype=bool)
    for k in range(cohort.num_classes):
        members = np.flatnonzero(cohort.labels == k)
        chosen = rng.permutation(members)[:alloc[k]]
        split[chosen] = True
    return replace(cohort, split=split)


def standardize(cohort: Cohort) -> Cohort:
    """z-score every feature column with training-split statistics only."""
    train = cohort.train_mask

    def z(X: np.ndarray) -> np.ndarray:
        mu = X[train].mean(axis=0)
        sd = X[train].std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return (X - mu) / sd

    return replace(cohort, image_features=z(cohort.image_features),
                   clinical_features=z(cohort.clinical_features))


# -- CSV I/O -------------------------------------------------------------------

def _read_table(path: str | Path) -> tuple[list[str], dict[str, list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file (header row is mandatory)") from None
        if not header or header[0] != "patient_id":
            raise ParseError(f"{path}: first column must be 'patient_id', got {header[:1]}")
        rows: dict[str, list[str]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            pid = row[0].strip()
            if pid in rows:
                raise ParseError(f"{path}:{lineno}: duplicate patient_id {pid!r}")
            rows[pid] = [c.strip() for c in row[1:]]
    return header[1:], rows


def _to_float(path, pid: str, column: str, cell: str) -> float:
    if cell.lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"{path}: patient {pid!r}, column {column!r}: "
                         f"non-numeric value {cell!r}") from None


def load_cohort(image_csv, clinical_csv, labels_csv, label_column: str | None = None,
                train_fraction: float = DEFAULT_TRAIN_FRACTION, seed: int = 0,
                do_standardize: bool = True, strict: bool = True) -> Cohort:
    """Join the three tables on ``patient_id`` and return a split cohort.

    With ``strict`` any id present in only some files raises ``JoinError``;
    otherwise the inner join is kept and orphans are logged. Rows with a
    missing feature or label are dropped and listed in ``Cohort.rejected``.
    """
    img_cols, img = _read_table(image_csv)
    cli_cols, cli = _read_table(clinical_csv)
    lab_cols, lab = _read_table(labels_csv)
    if not lab_cols:
        raise ParseError(f"{labels_csv}: no label columns")
    column = label_column or lab_cols[0]
    if column not in lab_cols:
        raise ConfigError(f"label column {column!r} not in {lab_cols}")
    li = lab_cols.index(column)

    sets = {"image": set(img), "clinical": set(cli), "labels": set(lab)}
    common = sets["image"] & sets["clinical"] & sets["labels"]
    orphans = {name: sorted(s - common) for name, s in sets.items() if s - common}
    if orphans:
        if strict:
            raise JoinError(f"patient ids missing from some files: {orphans}", orphans)
        log.warning("dropping patients not present in every file: %s", orphans)

    ids, rejected = [], []
    image_rows, clin_rows, label_vals = [], [], []
    for pid in sorted(common):
        irow = [_to_float(image_csv, pid, c, v) for c, v in zip(img_cols, img[pid])]
        crow = [_to_float(clinical_csv, pid, c, v) for c, v in zip(cli_cols, cli[pid])]
        label = lab[pid][li]
        if any(math.isnan(v) for v in irow + crow) or label.lower() in MISSING_TOKENS:
            rejected.append(pid)
            continue
        ids.append(pid)
        image_rows.append(irow)
        clin_rows.append(crow)
        label_vals.append(label)
    if rejected:
        log.warning("rejected %d patients with missing values: %s", len(rejected), rejected)
    if not ids:
        raise DataError("no patients left after joining and rejecting missing values")

    class_names = sorted(set(label_vals), key=_label_sort_key)
    index = {name: k for k, name in enumerate(class_names)}
    cohort = Cohort(
        patient_ids=ids,
        image_features=np.array(image_rows, dtype=np.float64).reshape(len(ids), len(img_cols)),
        clinical_features=np.array(clin_rows, dtype=np.float64).reshape(len(ids), len(cli_cols)),
        labels=np.array([index[v] for v in label_vals], dtype=int),
        class_names=class_names,
        clinical_names=list(cli_cols),
        rejected=rejected,
    )
    if cohort.n < 2 or cohort.num_classes < 2:
        return cohort
    cohort = split_cohort(cohort, train_fraction, seed)
    return standardize(cohort) if do_standardize else cohort


def _label_sort_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def write_cohort(cohort: Cohort, out_dir: str | Path, label_column: str = "label") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"image": out / "image.csv", "clinical": out / "clinical.csv",
             "labels": out / "labels.csv"}
    img_header = [f"f_{j}" for j in range(cohort.image_features.shape[1])]
    for key, header, X in (("image", img_header, cohort.image_features),
                           ("clinical", cohort.clinical_names, cohort.clinical_features)):
        with open(paths[key], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", *header])
            for pid, row in zip(cohort.patient_ids, X):
                w.writerow([pid, *(repr(float(v)) for v in row)])
    with open(paths["labels"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", label_column])
        for pid, k in zip(cohort.patient_ids, cohort.labels):
            w.writerow([pid, cohort.class_names[k]])
    return paths
