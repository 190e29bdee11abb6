"""Load MIMIC-shaped CSV tables and extract two-class lab time-series cohorts."""
from __future__ import annotations

import csv
import gzip
import io
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class LabEvent:
    subject_id: int
    hadm_id: int
    item_id: int
    loinc_code: str
    charttime: datetime
    value: float


@dataclass(frozen=True)
class Diagnosis:
    subject_id: int
    hadm_id: int
    icd9_code: str

    @property
    def icd9_category(self) -> str:
        return icd9_category(self.icd9_code)


@dataclass(frozen=True, eq=False)
class LabSeries:
    hadm_id: int
    subject_id: int
    times: np.ndarray
    values: np.ndarray
    label: int

    def __len__(self):
        return len(self.times)


@dataclass
class CooccurrenceMatrix:
    icd9_categories: list
    loinc_codes: list
    counts: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    def to_rows(self):
        yield ["icd9_category", *self.loinc_codes]
        for cat, row in zip(self.icd9_categories, self.counts):
            yield [cat, *(int(v) for v in row)]


def icd9_category(code: str) -> str:
    """First three characters, keeping any V/E prefix (``V4581`` -> ``V45``)."""
    code = code.strip().replace(".", "")
    if not code:
        raise ValueError("empty ICD-9 code")
    return code[:3]


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def read_table(path, required):
    """Yield rows as dicts keyed by lower-case column name, checking the header."""
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise SchemaError(path, required[0]) from None
        for col in required:
            if col not in header:
                raise SchemaError(path, col)
        for row in reader:
            if not row:
                continue
            yield dict(zip(header, row))


def _int_or_none(text):
    text = (text or "").strip()
    if not text:
        return None
    try:
        return int(float(text))
    except ValueError:
        return None


def load_loinc_map(path) -> dict:
    out = {}
    for row in read_table(path, ("itemid", "loinc_code")):
        item = _int_or_none(row["itemid"])
        code = (row["loinc_code"] or "").strip()
        if item is not None and code:
            out[item] = code
    return out


def load_lab_events(path, loinc_map_path, drops: Counter | None = None) -> list[LabEvent]:
    """Parse LABEVENTS rows joined to their LOINC codes.

    Rows with a missing or non-numeric value, missing admission, unparsable
    time, or unmapped item are skipped; the reasons are tallied into
    ``drops`` when given.
    """
    loinc = load_loinc_map(loinc_map_path)
    drops = Counter() if drops is None else drops
    events = []
    for row in read_table(path, ("subject_id", "hadm_id", "itemid", "charttime", "valuenum")):
        hadm = _int_or_none(row["hadm_id"])
        if hadm is None:
            drops["missing_hadm_id"] += 1
            continue
        try:
            value = float(row["valuenum"])
        except ValueError:
            drops["missing_value"] += 1
            continue
        if not math.isfinite(value):
            drops["missing_value"] += 1
            continue
        try:
            when = datetime.strptime(row["charttime"].strip(), TIME_FORMAT)
        except ValueError:
            drops["bad_charttime"] += 1
            continue
        item = _int_or_none(row["itemid"])
        code = loinc.get(item)
        if code is None:
            drops["unmapped_item"] += 1
            continue
        events.append(LabEvent(_int_or_none(row["subject_id"]), hadm, item, code, when, value))
    if drops:
        log.info("%s: dropped %s", path, dict(drops))
    return events


def load_diagnoses(path) -> list[Diagnosis]:
    out = []
    for row in read_table(path, ("subject_id", "hadm_id", "icd9_code")):
        hadm = _int_or_none(row["hadm_id"])
        code = (row["icd9_code"] or "").strip()
        if hadm is None or not code:
            continue
        out.append(Diagnosis(_int_or_none(row["subject_id"]), hadm, code))
    return out


def load_icd9_titles(path) -> dict:
    return {row["icd9_code"].strip(): row["short_title"]
            for row in read_table(path, ("icd9_code", "short_title"))}


def _ranked(groups: dict, top: int) -> list:
    return sorted(groups, key=lambda k: (-len(groups[k]), k))[:top]


def cooccurrence(events, diagnoses, top_icd9: int = 12, top_loinc: int = 4) -> CooccurrenceMatrix:
    """Distinct-admission counts for ICD-9 category x LOINC code pairs.

    Rows and columns are the ``top_icd9`` categories and ``top_loinc`` codes
    with the most distinct admissions, most frequent first.
    """
    if top_icd9 < 1 or top_loinc < 1:
        raise ValueError("top_icd9 and top_loinc must be >= 1")
    by_cat = defaultdict(set)
    for d in diagnoses:
        by_cat[d.icd9_category].add(d.hadm_id)
    by_code = defaultdict(set)
    for e in events:
        by_code[e.loinc_code].add(e.hadm_id)
    if not by_cat or not by_code:
        return CooccurrenceMatrix([], [])
    cats = _ranked(by_cat, top_icd9)
    codes = _ranked(by_code, top_loinc)
    counts = np.array([[len(by_cat[c] & by_code[l]) for l in codes] for c in cats], dtype=np.int64)
    return CooccurrenceMatrix(cats, codes, counts)


def select_cohort(events, diagnoses, loinc: str, cat_a: str, cat_b: str,
                  min_samples: int = 3) -> list[LabSeries]:
    """One series per admission diagnosed in exactly one of two categories.

    Same-timestamp samples are averaged, times are rebased to fractional
    days since the first sample, and admissions with fewer than
    ``min_samples`` distinct sample times are dropped. Label is 0 for
    ``cat_a`` and 1 for ``cat_b``. Output is ordered by admission id.
    """
    if cat_a == cat_b:
        raise ValueError("cat_a and cat_b must differ")
    cats_by_hadm = defaultdict(set)
    for d in diagnoses:
        cats_by_hadm[d.hadm_id].add(d.icd9_category)

    samples = defaultdict(lambda: defaultdict(list))
    subjects = {}
    for e in events:
        if e.loinc_code == loinc:
            samples[e.hadm_id][e.charttime].append(e.value)
            subjects.setdefault(e.hadm_id, e.subject_id)

    tally = Counter()
    cohort = []
    for hadm in sorted(samples):
        cats = cats_by_hadm.get(hadm, set())
        in_a, in_b = cat_a in cats, cat_b in cats
        if in_a and in_b:
            tally["both_categories"] += 1
            continue
        if not (in_a or in_b):
            tally["neither_category"] += 1
            continue
        stamps = sorted(samples[hadm])
        if len(stamps) < min_samples:
            tally["too_few_samples"] += 1
            continue
        t0 = stamps[0]
        times = np.array([(s - t0).total_seconds() / SECONDS_PER_DAY for s in stamps])
        values = np.array([float(np.mean(samples[hadm][s])) for s in stamps])
        cohort.append(LabSeries(hadm, subjects[hadm], times, values, 0 if in_a else 1))
        tally["label_1" if in_b else "label_0"] += 1
    log.info("cohort %s vs %s on %s: %s", cat_a, cat_b, loinc, dict(tally))
    if not cohort:
        log.warning("no admissions qualify for %s vs %s on LOINC %s (%s)",
                    cat_a, cat_b, loinc, dict(tally))
    return cohort


def split_cohort(cohort, train_fraction: float = 0.7, seed: int = 0):
    """Seeded random partition by admission into (train, test).

    The train side gets ``round(train_fraction * n)`` admissions; both sides
    keep admission-id order.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(cohort)
    if n == 0:
        raise DataError("cannot split an empty cohort")
    n_train = int(round(train_fraction * n))
    if n_train in (0, n):
        raise DataError(f"split of {n} admissions at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    chosen = np.zeros(n, dtype=bool)
    chosen[order[:n_train]] = True
    train = [s for s, c in zip(cohort, chosen) if c]
    test = [s for s, c in zip(cohort, chosen) if not c]
    return train, test


def write_cohort_csv(path, cohort):
    """Long format: hadm_id,label,t_days,value, ordered by admission then time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hadm_id", "label", "t_days", "value"])
        for s in sorted(cohort, key=lambda s: s.hadm_id):
            for t, v in zip(s.times, s.values):
                w.writerow([s.hadm_id, s.label, repr(float(t)), repr(float(v))])


def read_cohort_csv(path) -> list[LabSeries]:
    rows = defaultdict(list)
    labels = {}
    for row in read_table(path, ("hadm_id", "label", "t_days", "value")):
        hadm = int(row["hadm_id"])
        rows[hadm].append((float(row["t_days"]), float(row["value"])))
        labels[hadm] = int(row["label"])
    out = []
    for hadm in sorted(rows):
        pts = sorted(rows[hadm])
        out.append(LabSeries(hadm, None, np.array([p[0] for p in pts]),
                             np.array([p[1] for p in pts]), labels[hadm]))
    return out
