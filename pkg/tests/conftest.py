import numpy as np
import pytest

from phenolearn import _kernels_py
from phenolearn.synth import SyntheticSpec, generate_synthetic

try:
    from phenolearn import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_kernels_c, id="cython",
                         marks=pytest.mark.skipif(_kernels_c is None,
                                                  reason="compiled kernels not built"))]


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def synthetic_tables(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    return generate_synthetic(SyntheticSpec(n_per_class=10, seed=3), out)


@pytest.fixture(scope="session")
def synthetic_patches(synthetic_tables):
    """Scaled 40-wide patches from a small synthetic cohort (fixed GP hyperparameters)."""
    from phenolearn import autoencoder, cohort, gpr
    from phenolearn.pipeline import apply_scaling, patch_scaling
    events = cohort.load_lab_events(synthetic_tables["labevents"], synthetic_tables["d_labitems"])
    diagnoses = cohort.load_diagnoses(synthetic_tables["diagnoses"])
    series = cohort.select_cohort(events, diagnoses, "1742-6", "428", "571")
    h = gpr.RqHyperparams(1.0, 2.0, 1.7, 0.05)
    interp = [gpr.interpolate(s, h) for s in series]
    pm = autoencoder.sample_patches(interp, 20, 300, seed=4)
    pm.X = apply_scaling(pm.X, patch_scaling(pm.X, 20), 20)
    return pm


# -------------------------------------------------- acceptance report lines

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seconds": 0.0, "ran": False})
    entry["seconds"] += report.duration  # setup included: shared fixtures do the real work
    if report.when == "call" or report.failed:
        entry["ran"] = True
        entry["ok"] &= report.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = ("PASS" if e["ok"] else "FAIL") if e["ran"] else "SKIP"
        terminalreporter.write_line(
            f"criterion {number:2d}: {status}  {e['title']} ({e['seconds']:.1f} s)")
