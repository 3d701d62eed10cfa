import numpy as np
import pytest

from patentsurv import _kernels
from patentsurv.dataset import Dataset, DesignMatrix, PatentRecord

BACKENDS = ["python"] + (["cython"] if _kernels.compiled_accumulate is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available accumulation kernel."""
    fn = _kernels.python_accumulate if request.param == "python" else _kernels.compiled_accumulate
    monkeypatch.setattr(_kernels, "accumulate", fn)
    return request.param


def make_record(i, years, event, dsir=0, ow=0, tech="chemistry", nc=5, ni=2, fs=1, ts=1):
    return PatentRecord(
        id=f"R{i}",
        filing_year=2000,
        survival_years=years,
        event=event,
        nc=nc,
        ni=ni,
        fs=fs,
        ts=ts,
        dsir=dsir,
        ow=ow,
        tech=tech,
        firm_id="F1",
    )


def make_dataset(rows):
    """rows: iterables of (years, event, **covariates) dicts or (years, event) tuples."""
    recs = []
    for i, r in enumerate(rows):
        if isinstance(r, dict):
            recs.append(make_record(i, **r))
        else:
            recs.append(make_record(i, *r))
    return Dataset(tuple(recs), "test")


@pytest.fixture
def hand_km():
    # (1, event), (2, event), (2, censored), (3, event)
    return make_dataset([(1, 1), (2, 1), (2, 0), (3, 1)])


def random_design(rng, n, p, ties, tmax=None):
    """Small random design; with ``ties`` the times repeat."""
    x = rng.normal(size=(n, p))
    if ties:
        times = rng.integers(1, tmax or max(2, n // 3), size=n)
    else:
        times = rng.permutation(n) + 1
    events = (rng.random(n) < 0.75).astype(int)
    events[rng.integers(n)] = 1
    return DesignMatrix.from_arrays(x, times, events)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
