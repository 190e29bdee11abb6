"""Stage-by-stage pipeline from raw tables to metrics and figures.

Every stage reads its inputs from files in the run directory and writes its
outputs there, so any stage can be rerun from the intermediates of the
previous one. A stage whose outputs all exist is skipped unless forced.
"""
from __future__ import annotations

import csv
import dataclasses
import fcntl
import hashlib
import logging
import os
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, fields

import numpy as np

from . import analysis, autoencoder, cohort, gpr, plots, tables
from .errors import ConfigError, DataError, NumericalError, PhenoError
from .preprocess import WarpParams

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    labevents: str = "LABEVENTS.csv"
    diagnoses: str = "DIAGNOSES_ICD.csv"
    d_labitems: str = "D_LABITEMS.csv"
    d_icd_diagnoses: str = ""
    loinc: str = "1742-6"
    cat_a: str = "428"
    cat_b: str = "571"
    min_samples: int = 3
    train_fraction: float = 0.7
    top_icd9: int = 12
    top_loinc: int = 4
    warp_a: float = 3.0
    warp_b: float = 0.0
    grid_amplitude2: str = "0.25,0.5,1,2"
    grid_tau: str = ",".join(repr(float(v)) for v in np.geomspace(0.1, 30.0, 7))
    grid_alpha: str = "0.5,1,2,5"
    grid_noise2: str = "0.01,0.05,0.1,0.25"
    interval_days: float = 0.25
    pad_samples: int = 10
    patch_len: int = 20
    n_patches: int = 2000
    n_test_patches: int = 0
    ae_hidden: int = 100
    ae_l1: float = 1e-4
    ae_l2: float = 1e-3
    ae_epochs: int = 200
    ae_learning_rate: float = 0.01
    ae_batch_size: int = 64
    ae_validation_fraction: float = 0.2
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_max_points: int = 500
    logistic_l2: float = 0.01
    logistic_iterations: int = 2000
    out_dir: str = "run"
    seed: int = 0

    @property
    def warp(self):
        return WarpParams(self.warp_a, self.warp_b)

    @property
    def grid(self):
        def floats(text):
            return tuple(float(v) for v in str(text).split(",") if v.strip())
        return gpr.GridSpec(floats(self.grid_amplitude2), floats(self.grid_tau),
                            floats(self.grid_alpha), floats(self.grid_noise2))

    def train_config(self):
        return autoencoder.TrainConfig(
            l1_activity=self.ae_l1, l2_weight=self.ae_l2, epochs=self.ae_epochs,
            learning_rate=self.ae_learning_rate, batch_size=self.ae_batch_size,
            validation_fraction=self.ae_validation_fraction, seed=stage_seed(self.seed, "train-ae"),
            hidden=self.ae_hidden)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def validate(self):
        try:
            self.warp
            grid = self.grid
            self.train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if len(grid) == 0:
            raise ConfigError("hyperparameter grid is empty")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.interval_days <= 0 or self.pad_samples < 0:
            raise ConfigError("interval_days must be > 0 and pad_samples >= 0")
        if self.patch_len < 1 or self.n_patches < 1 or self.n_test_patches < 0:
            raise ConfigError("patch_len, n_patches must be >= 1; n_test_patches >= 0")
        if self.cat_a == self.cat_b:
            raise ConfigError("cat_a and cat_b must differ")
        return self


def _coerce(name, value, kind):
    if kind is bool:
        return str(value).lower() in ("1", "true", "yes")
    try:
        return kind(value) if kind is not int else int(float(value))
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind.__name__}") from None


def make_config(values: dict | None = None, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply string or typed overrides to a config; unknown keys are errors."""
    cfg = dataclasses.replace(base) if base else PipelineConfig()
    kinds = {f.name: type(f.default) for f in fields(PipelineConfig)}
    for key, value in (values or {}).items():
        key = key.replace("-", "_")
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value, kinds[key]))
    return cfg


def load_config(path, overrides=None) -> PipelineConfig:
    """Flat ``key = value`` file; relative table paths resolve against its directory."""
    try:
        values = tables.read_kv(path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    base = os.path.dirname(os.path.abspath(path))
    for key in ("labevents", "diagnoses", "d_labitems", "d_icd_diagnoses", "out_dir"):
        if values.get(key) and not os.path.isabs(values[key]):
            values[key] = os.path.join(base, values[key])
    values.update(overrides or {})
    return make_config(values)


def stage_seed(master: int, stage: str) -> int:
    """Independent per-stage seed derived from the master seed and stage name."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def worker_threads() -> int:
    raw = os.environ.get("PHENO_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PHENO_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


class StageError(PhenoError):
    """A stage failed; carries the stage name and the exit code of the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        if isinstance(cause, PhenoError):
            self.exit_code = cause.exit_code
        elif isinstance(cause, (OSError, KeyError)):
            self.exit_code = DataError.exit_code
        elif isinstance(cause, (ArithmeticError, np.linalg.LinAlgError)):
            self.exit_code = NumericalError.exit_code
        else:
            self.exit_code = ConfigError.exit_code


# ---------------------------------------------------------------- stages

def _require(*paths):
    for p in paths:
        if not os.path.exists(p):
            raise DataError(f"missing input file: {p}")


def _load_events(cfg):
    _require(cfg.labevents, cfg.d_labitems, cfg.diagnoses)
    drops = Counter()
    events = cohort.load_lab_events(cfg.labevents, cfg.d_labitems, drops)
    return events, cohort.load_diagnoses(cfg.diagnoses), drops


def stage_cooccur(cfg):
    events, diagnoses, _ = _load_events(cfg)
    m = cohort.cooccurrence(events, diagnoses, cfg.top_icd9, cfg.top_loinc)
    with open(cfg.path("cooccurrence.csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(m.to_rows())
    return m


def stage_cohort(cfg):
    events, diagnoses, drops = _load_events(cfg)
    series = cohort.select_cohort(events, diagnoses, cfg.loinc, cfg.cat_a, cfg.cat_b,
                                  cfg.min_samples)
    if not series:
        raise DataError(f"no admissions qualify for {cfg.cat_a} vs {cfg.cat_b} on {cfg.loinc}")
    train, test = cohort.split_cohort(series, cfg.train_fraction, stage_seed(cfg.seed, "split"))
    cohort.write_cohort_csv(cfg.path("cohort.csv"), series)
    cohort.write_cohort_csv(cfg.path("cohort_train.csv"), train)
    cohort.write_cohort_csv(cfg.path("cohort_test.csv"), test)
    summary = {"n_admissions": len(series), "n_train": len(train), "n_test": len(test),
               "n_label_0": sum(s.label == 0 for s in series),
               "n_label_1": sum(s.label == 1 for s in series),
               "n_samples": sum(len(s) for s in series)}
    summary.update({f"dropped_{k}": v for k, v in sorted(drops.items())})
    tables.write_kv(cfg.path("cohort_summary.txt"), summary)


def stage_gpr_fit(cfg):
    train = cohort.read_cohort_csv(cfg.path("cohort_train.csv"))
    prepared = [gpr.prepare_series(s.times, s.values, cfg.warp)[:2] for s in train]
    grid = cfg.grid
    best, total = gpr.grid_search(prepared, grid, threads=worker_threads())
    tables.write_kv(cfg.path("hyperparams.txt"), {
        "amplitude2": best.amplitude2, "alpha": best.alpha, "tau": best.tau,
        "noise2": best.noise2, "total_lml": total, "n_series": len(train),
        "grid_points": len(grid)})
    return best


def read_hyperparams(path) -> gpr.RqHyperparams:
    kv = tables.read_kv(path)
    return gpr.RqHyperparams(float(kv["amplitude2"]), float(kv["alpha"]), float(kv["tau"]),
                             float(kv["noise2"]))


def stage_interpolate(cfg):
    h = read_hyperparams(cfg.path("hyperparams.txt"))
    for split in ("train", "test"):
        series = cohort.read_cohort_csv(cfg.path(f"cohort_{split}.csv"))
        out = [gpr.interpolate(s, h, cfg.warp, cfg.interval_days, cfg.pad_samples) for s in series]
        tables.write_interpolated(cfg.path(f"interp_{split}.csv"), out)


def stage_patches(cfg):
    train = tables.read_interpolated(cfg.path("interp_train.csv"))
    test = tables.read_interpolated(cfg.path("interp_test.csv"))
    n_test = cfg.n_test_patches or max(1, round(cfg.n_patches * len(test) / max(len(train), 1)))
    pm = autoencoder.sample_patches(train, cfg.patch_len, cfg.n_patches,
                                    stage_seed(cfg.seed, "patches-train"))
    tables.write_patches(cfg.path("patches_train.csv"), pm)
    pm = autoencoder.sample_patches(test, cfg.patch_len, n_test, stage_seed(cfg.seed, "patches-test"))
    tables.write_patches(cfg.path("patches_test.csv"), pm)


def patch_scaling(X, patch_len):
    """Global affine map putting the mean channel at zero mean, unit spread.

    The variance channel is divided by the same spread squared so it stays
    the variance of the rescaled mean.
    """
    means = X[:, :patch_len]
    center = float(means.mean())
    spread = float(means.std()) or 1.0
    return {"center": center, "spread": spread}


def apply_scaling(X, scaling, patch_len):
    out = np.empty_like(X)
    out[:, :patch_len] = (X[:, :patch_len] - scaling["center"]) / scaling["spread"]
    out[:, patch_len:] = X[:, patch_len:] / scaling["spread"] ** 2
    return out


def stage_train_ae(cfg):
    pm = tables.read_patches(cfg.path("patches_train.csv"))
    scaling = patch_scaling(pm.X, pm.patch_len)
    tables.write_kv(cfg.path("patch_scaling.txt"), scaling)
    history = {}
    model = autoencoder.train_stacked(apply_scaling(pm.X, scaling, pm.patch_len),
                                      cfg.train_config(), history)
    autoencoder.save_model(model, cfg.path("model.bin"))
    with open(cfg.path("ae_history.csv"), "w") as fh:
        fh.write("phase,epoch,train_loss,val_loss\n")
        for phase, curve in history.items():
            for epoch, (tl, vl) in enumerate(curve):
                fh.write(f"{phase},{epoch},{tables.fmt(tl)},{tables.fmt(vl)}\n")


def _read_scaling(cfg):
    return {k: float(v) for k, v in tables.read_kv(cfg.path("patch_scaling.txt")).items()}


def stage_features(cfg):
    model = autoencoder.load_model(cfg.path("model.bin"))
    scaling = _read_scaling(cfg)
    for split in ("train", "test"):
        pm = tables.read_patches(cfg.path(f"patches_{split}.csv"))
        X = apply_scaling(pm.X, scaling, pm.patch_len)
        for layer in (1, 2):
            F = autoencoder.encode(model, X, layer)
            tables.write_features(cfg.path(f"features_l{layer}_{split}.csv"), F, pm.hadm_ids,
                                  pm.labels)


def stage_analyze(cfg):
    train_adm = len(cohort.read_cohort_csv(cfg.path("cohort_train.csv")))
    test_adm = len(cohort.read_cohort_csv(cfg.path("cohort_test.csv")))
    metrics = {}
    for layer in (1, 2):
        Ftr, _, ytr = tables.read_features(cfg.path(f"features_l{layer}_train.csv"))
        Fte, hte, yte = tables.read_features(cfg.path(f"features_l{layer}_test.csv"))
        model = analysis.fit_logistic(Ftr, ytr, cfg.logistic_l2, cfg.logistic_iterations)
        scores = model.decision_function(Fte)
        metrics[f"auc_layer{layer}"] = analysis.auc_score(scores, yte)
        metrics[f"auc_layer{layer}_admission"] = analysis.auc_score(
            *analysis.admission_scores(scores, hte, yte))
        metrics[f"logistic_grad_norm_layer{layer}"] = model.grad_norm

        rng = np.random.default_rng(stage_seed(cfg.seed, "tsne-subsample"))
        keep = np.sort(rng.permutation(len(Fte))[:cfg.tsne_max_points])
        perplexity = min(cfg.tsne_perplexity, (len(keep) - 1) / 3 - 1e-6)
        emb = analysis.tsne(Fte[keep], perplexity, cfg.tsne_iterations,
                            stage_seed(cfg.seed, f"tsne-l{layer}"))
        tables.write_embedding(cfg.path(f"embedding_l{layer}.csv"), emb.coords, yte[keep], keep)
        metrics[f"tsne_kl_layer{layer}"] = emb.kl_divergence
    metrics["tsne_kl"] = metrics["tsne_kl_layer2"]
    metrics["n_train"] = train_adm
    metrics["n_test"] = test_adm
    metrics["n_train_patches"] = len(ytr)
    metrics["n_test_patches"] = len(yte)
    ordered = ["auc_layer1", "auc_layer2", "tsne_kl", "n_train", "n_test"]
    tables.write_kv(cfg.path("metrics.txt"),
                    {k: metrics[k] for k in ordered + sorted(set(metrics) - set(ordered))})
    return metrics


PLOT_FILES = ("gpr_overlay.svg", "gpr_examples.svg", "first_layer_weights.svg",
              "tsne_layer1.svg", "tsne_layer2.svg")


def stage_plot(cfg):
    series = {s.hadm_id: s for s in cohort.read_cohort_csv(cfg.path("cohort_train.csv"))}
    interp = tables.read_interpolated(cfg.path("interp_train.csv"))
    if not interp:
        raise DataError(f"{cfg.path('interp_train.csv')}: no interpolated series")
    rng = np.random.default_rng(stage_seed(cfg.seed, "plot"))
    picks = rng.permutation(len(interp))[:7]
    first = interp[picks[0]]
    plots.plot_gpr_overlay(cfg.path("gpr_overlay.svg"), series[first.hadm_id], first, cfg.warp)
    plots.plot_gpr_examples(cfg.path("gpr_examples.svg"),
                            [(series[interp[k].hadm_id], interp[k]) for k in picks[1:]], cfg.warp)
    model = autoencoder.load_model(cfg.path("model.bin"))
    plots.plot_signatures(cfg.path("first_layer_weights.svg"),
                          autoencoder.first_layer_signatures(model), cfg.patch_len)
    for layer in (1, 2):
        coords, labels = tables.read_embedding(cfg.path(f"embedding_l{layer}.csv"))
        plots.plot_embedding(cfg.path(f"tsne_layer{layer}.svg"), coords, labels,
                             f"t-SNE of layer-{layer} features")


# name -> (function, required inputs, outputs)
STAGES = {
    "cohort": (stage_cohort, (), ("cohort.csv", "cohort_train.csv", "cohort_test.csv",
                                  "cohort_summary.txt")),
    "gpr-fit": (stage_gpr_fit, ("cohort_train.csv",), ("hyperparams.txt",)),
    "interpolate": (stage_interpolate, ("hyperparams.txt", "cohort_train.csv", "cohort_test.csv"),
                    ("interp_train.csv", "interp_test.csv")),
    "patches": (stage_patches, ("interp_train.csv", "interp_test.csv"),
                ("patches_train.csv", "patches_test.csv")),
    "train-ae": (stage_train_ae, ("patches_train.csv",),
                 ("patch_scaling.txt", "model.bin", "ae_history.csv")),
    "features": (stage_features, ("model.bin", "patch_scaling.txt", "patches_train.csv",
                                  "patches_test.csv"),
                 tuple(f"features_l{k}_{s}.csv" for k in (1, 2) for s in ("train", "test"))),
    "analyze": (stage_analyze, tuple(f"features_l{k}_{s}.csv" for k in (1, 2)
                                     for s in ("train", "test")),
                ("embedding_l1.csv", "embedding_l2.csv", "metrics.txt")),
    "plot": (stage_plot, ("cohort_train.csv", "interp_train.csv", "model.bin",
                          "embedding_l1.csv", "embedding_l2.csv"), PLOT_FILES),
}


@contextmanager
def run_lock(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    fh = open(os.path.join(out_dir, ".lock"), "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise ConfigError(f"another process is using output directory {out_dir}") from None
        yield
    finally:
        fh.close()


def run_stage(cfg: PipelineConfig, name: str, force: bool = True):
    """Run one stage; with ``force=False`` skip it when all outputs exist."""
    func, inputs, outputs = STAGES[name]
    if not force and all(os.path.exists(cfg.path(o)) for o in outputs):
        log.info("stage %s: outputs present, skipping", name)
        return None
    try:
        _require(*(cfg.path(i) for i in inputs))
        log.info("stage %s: running", name)
        return func(cfg)
    except StageError:
        raise
    except (PhenoError, OSError, ValueError, ArithmeticError, KeyError,
            np.linalg.LinAlgError) as e:
        raise StageError(name, e) from e


def run_pipeline(cfg: PipelineConfig, force: bool = False, stages=None):
    """Run stages in order (all by default) under the output directory lock.

    Returns the output directory.
    """
    cfg.validate()
    with run_lock(cfg.out_dir):
        for name in stages or STAGES:
            run_stage(cfg, name, force=force)
    return cfg.out_dir
