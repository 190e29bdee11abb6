"""Synthetic MIMIC-shaped tables with two separable lab-trajectory classes.

Class A admissions carry ICD-9 category 428 and follow a rising ramp; class B
carry 571 and follow a decaying spike. Sampling is irregular (exponential
gaps) and values get additive Gaussian noise.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .cohort import TIME_FORMAT

ALT_ITEMID, ALT_LOINC = 50861, "1742-6"
AST_ITEMID, AST_LOINC = 50878, "1920-8"
SIGNATURES = ("ramp", "spike")
TABLES = {
    "labevents": "LABEVENTS.csv",
    "diagnoses": "DIAGNOSES_ICD.csv",
    "d_labitems": "D_LABITEMS.csv",
    "d_icd_diagnoses": "D_ICD_DIAGNOSES.csv",
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 100
    signature_a: str = "ramp"
    signature_b: str = "spike"
    min_samples: int = 6
    max_samples: int = 16
    mean_gap_days: float = 0.6
    noise: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 2:
            raise ValueError("need at least 2 admissions per class")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 3 <= self.min_samples <= self.max_samples:
            raise ValueError("need 3 <= min_samples <= max_samples")
        for sig in (self.signature_a, self.signature_b):
            if sig not in SIGNATURES:
                raise ValueError(f"unknown signature {sig!r}; choose from {SIGNATURES}")


def class_mean(signature: str, t):
    """Noise-free trajectory in IU/L at ``t`` days after the first sample."""
    t = np.asarray(t, dtype=np.float64)
    if signature == "ramp":
        return 30.0 + 12.0 * t
    if signature == "spike":
        return 30.0 + 150.0 * np.exp(-t / 1.5)
    raise ValueError(f"unknown signature {signature!r}")


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write the four input tables into ``out_dir``; returns their paths by role."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    epoch = datetime(2130, 1, 1)
    labs, diags = [], []
    hadm = 100000
    for label, (sig, cat) in enumerate(((spec.signature_a, "428"), (spec.signature_b, "571"))):
        for _ in range(spec.n_per_class):
            hadm += 1
            subject = hadm - 90000
            n = int(rng.integers(spec.min_samples, spec.max_samples + 1))
            gaps = 1.0 / 24.0 + rng.exponential(spec.mean_gap_days, size=n - 1)
            seconds = np.round(np.concatenate(([0.0], np.cumsum(gaps))) * 86400.0)
            t = seconds / 86400.0
            values = class_mean(sig, t) + spec.noise * rng.standard_normal(n)
            start = epoch + timedelta(days=int(rng.integers(0, 3650)),
                                      seconds=int(rng.integers(0, 86400)))
            for sec, v in zip(seconds, values):
                stamp = (start + timedelta(seconds=float(sec))).strftime(TIME_FORMAT)
                labs.append([subject, hadm, ALT_ITEMID, stamp, repr(float(v))])
            # an unrelated lab drawn once per admission
            labs.append([subject, hadm, AST_ITEMID, start.strftime(TIME_FORMAT),
                         repr(float(np.round(rng.uniform(10, 60), 1)))])
            diags.append([subject, hadm, cat + str(int(rng.integers(0, 10)))])
            if rng.random() < 0.5:
                diags.append([subject, hadm, "4019"])
            if rng.random() < 0.2:
                diags.append([subject, hadm, "V4581"])

    paths = {role: os.path.join(out_dir, name) for role, name in TABLES.items()}
    _write(paths["labevents"], ["SUBJECT_ID", "HADM_ID", "ITEMID", "CHARTTIME", "VALUENUM"], labs)
    _write(paths["diagnoses"], ["SUBJECT_ID", "HADM_ID", "ICD9_CODE"], diags)
    _write(paths["d_labitems"], ["ITEMID", "LABEL", "LOINC_CODE"],
           [[ALT_ITEMID, "Alanine Aminotransferase (ALT)", ALT_LOINC],
            [AST_ITEMID, "Asparate Aminotransferase (AST)", AST_LOINC]])
    _write(paths["d_icd_diagnoses"], ["ICD9_CODE", "SHORT_TITLE"],
           [["4280", "CHF NOS"], ["5710", "Alcoholic fatty liver"],
            ["4019", "Hypertension NOS"], ["V4581", "Aortocoronary bypass"]])
    return paths


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
