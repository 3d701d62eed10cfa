import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patentsurv.dataset import (
    CSV_HEADER,
    DatasetError,
    IdentifiabilityError,
    SchemaError,
    SpecError,
    dump_dataset,
    encode_design,
    load_dataset,
    validate,
)
from patentsurv.model_suite import CoxModelSpec, builtin_suite
from patentsurv.simulator import MODEL7_TRUTH, SimConfig, simulate

from conftest import make_dataset, make_record

HEADER = ",".join(CSV_HEADER) + "\n"
ROW = "P1,2001,12,1,10,3,2,1,1,0,chemistry,F7\n"


def test_empty_dataset_loads():
    d = load_dataset(HEADER.encode())
    assert len(d) == 0


def test_single_row():
    d = load_dataset(io.BytesIO((HEADER + ROW).encode()))
    assert len(d) == 1
    r = d.records[0]
    assert (r.survival_years, r.event, r.tech, r.firm_id) == (12, 1, "chemistry", "F7")


def test_out_of_range_years():
    with pytest.raises(DatasetError, match=r"\[1,20\]"):
        load_dataset(HEADER + ROW.replace(",12,1,", ",25,1,"))


def test_missing_column_named():
    bad = HEADER.replace("ts,", "")
    with pytest.raises(SchemaError, match="'ts'"):
        load_dataset(bad)


def test_unparseable_cell_reports_row_and_column():
    text = HEADER + ROW + ROW.replace("P1", "P2").replace(",10,", ",ten,")
    with pytest.raises(DatasetError, match=r"row 2, column 'nc'"):
        load_dataset(text)


def test_duplicate_id_rejected():
    with pytest.raises(DatasetError, match="duplicate id"):
        load_dataset(HEADER + ROW + ROW)


def test_validate_valid_cohort_is_empty():
    assert validate(simulate(SimConfig(n=300, seed=1))).ok


def test_validate_bad_event():
    d = make_dataset([(3, 2), (4, 1)])
    report = validate(d)
    assert len(report) == 1
    assert report.issues[0].message == "event must be 0 or 1"
    assert report.issues[0].row == 1


def test_validate_duplicate_ids():
    a = make_record(0, 3, 1)
    d = type(make_dataset([]))((a, a), "dup")
    report = validate(d)
    assert len(report) == 1
    assert report.issues[0].field == "id"


def test_validate_does_not_mutate():
    d = make_dataset([(3, 2), (25, 1)])
    before = d.records
    validate(d)
    assert d.records is before


def test_lenient_load_then_validate():
    d = load_dataset(HEADER + ROW.replace(",12,1,", ",12,2,"), strict=False)
    assert [i.field for i in validate(d)] == ["event"]


def test_round_trip():
    d = simulate(SimConfig(n=200, seed=5, true_coefficients=MODEL7_TRUTH))
    text = dump_dataset(d)
    again = load_dataset(text.encode())
    assert again.records == d.records
    assert dump_dataset(again) == text


def mixed_cohort():
    return simulate(SimConfig(n=500, seed=11, true_coefficients=MODEL7_TRUTH))


def test_encode_model1():
    m = encode_design(mixed_cohort(), builtin_suite()[0])
    assert m.column_names == ("DSIR",)
    assert set(np.unique(m.rows)) == {0.0, 1.0}


def test_encode_model7_columns():
    m = encode_design(mixed_cohort(), builtin_suite()[6])
    assert m.column_names == (
        "DSIR", "NC", "NI", "FS", "TS", "OW", "Electrical", "Chemistry", "Mechanical", "OtherField", "OW*DSIR",
    )
    assert m.rows.shape == (500, 11)


def test_interaction_column_is_product():
    d = mixed_cohort()
    m = encode_design(d, builtin_suite()[6])
    np.testing.assert_array_equal(m.rows[:, -1], d.columns["ow"] * d.columns["dsir"])


def test_tech_dummies_reference_encoding():
    d = mixed_cohort()
    m = encode_design(d, builtin_suite()[6])
    dummies = m.rows[:, 6:10]
    inst = d.columns["tech"] == "instruments"
    assert np.all(dummies[inst] == 0)
    assert np.all(dummies[~inst].sum(axis=1) == 1)


def test_constant_column_rejected():
    d = make_dataset([dict(years=y, event=1, dsir=1) for y in (1, 2, 3)])
    with pytest.raises(IdentifiabilityError, match="DSIR") as info:
        encode_design(d, builtin_suite()[0])
    assert info.value.column == "DSIR"


def test_unknown_covariate_rejected():
    with pytest.raises(SpecError):
        CoxModelSpec("bad", ("GRANTLAG",))


def test_encode_deterministic():
    d = mixed_cohort()
    a = encode_design(d, builtin_suite()[6])
    b = encode_design(d, builtin_suite()[6])
    assert a.rows.tobytes() == b.rows.tobytes()
    assert a.column_names == b.column_names


def test_design_is_read_only():
    m = encode_design(mixed_cohort(), builtin_suite()[0])
    with pytest.raises(ValueError):
        m.rows[0, 0] = 5


records = st.builds(
    lambda i, y, e, nc, ni, fs, ts, dsir, ow, tech: make_record(i, y, e, dsir, ow, tech, nc, ni, fs, ts),
    st.integers(0, 10**6),
    st.integers(1, 20),
    st.integers(0, 1),
    st.integers(0, 60),
    st.integers(0, 15),
    st.integers(0, 40),
    st.integers(1, 12),
    st.integers(0, 1),
    st.integers(0, 1),
    st.sampled_from(["chemistry", "electrical", "mechanical", "instruments", "other"]),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(records, max_size=30, unique_by=lambda r: r.id))
def test_round_trip_property(recs):
    d = type(make_dataset([]))(tuple(recs), "prop")
    assert load_dataset(dump_dataset(d)).records == d.records
