import csv
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solarcast.data import (
    ScalerParams,
    SeriesRecord,
    SymmetricMinMaxScaler,
    ausgrid_wide_to_long,
    fit_apply_scaler,
    load_long_csv,
    make_windows,
    prepare_datasets,
    select_subset,
    split,
    values,
    write_long_csv,
)
from solarcast.errors import ContractError, DataError, NotFoundError
from solarcast.synthetic import solar_records

HEADER = ["Customer", "Generator Capacity", "Postcode", "Consumption Category", "date",
          *[f"{h}:{m:02d}" for h in range(24) for m in (30, 0)][1:] + ["0:00"], "Row Quality"]


def write_wide(path, rows, header=HEADER, preamble=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if preamble:
            w.writerow(["Solar home electricity data 2011-12", "", ""])
        w.writerow(header)
        w.writerows(rows)


def day_row(customer, date, cat="GG", vals=None):
    vals = vals if vals is not None else [f"{0.01 * k:.3f}" for k in range(48)]
    return [customer, "3.78", "2076", cat, date, *vals, ""]


def test_load_long_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,kwh\n2012-01-01T00:00:00,0\n2012-01-01T00:30:00,0.5\n2012-01-01T01:00:00,1.25\n")
    recs = load_long_csv(p)
    assert len(recs) == 3 and recs[2].kwh == 1.25
    assert recs[1].timestamp == datetime(2012, 1, 1, 0, 30)


@pytest.mark.parametrize("body,match", [
    ("2012-01-01T00:00:00,0\n2012-01-01T00:00:00,1\n", "duplicate timestamp 2012-01-01T00:00:00"),
    ("2012-01-01T00:00:00,-1\n", "non-negative"),
    ("2012-01-01T00:30:00,0\n2012-01-01T00:00:00,1\n", "back in time"),
    ("2012-01-01T00:00:00,0\nnot-a-date,1\n", ":3:"),
])
def test_load_long_csv_errors(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,kwh\n" + body)
    with pytest.raises(DataError, match=match):
        load_long_csv(p)


def test_long_csv_round_trip(tmp_path):
    recs = solar_records(2)
    write_long_csv(recs, tmp_path / "x.csv")
    back = load_long_csv(tmp_path / "x.csv")
    assert [r.timestamp for r in back] == [r.timestamp for r in recs]
    assert np.allclose(values(back), values(recs))


def test_ausgrid_one_day(tmp_path):
    p = tmp_path / "w.csv"
    write_wide(p, [day_row("2076", "1/07/2011")])
    recs = ausgrid_wide_to_long(p, 2076)
    assert len(recs) == 48
    assert recs[0].timestamp == datetime(2011, 7, 1, 0, 0)
    assert recs[-1].timestamp == datetime(2011, 7, 1, 23, 30)
    assert recs[5].kwh == pytest.approx(0.05)


def test_ausgrid_filters_customer_and_channel(tmp_path):
    p = tmp_path / "w.csv"
    write_wide(p, [day_row("1", "1/07/2011"), day_row("2076", "1/07/2011"), day_row("2076", "1/07/2011", "GC"),
                   day_row("2076", "2/07/2011"), day_row("1", "2/07/2011")])
    recs = ausgrid_wide_to_long(p, "2076")
    assert len(recs) == 96
    assert recs[48].timestamp == datetime(2011, 7, 2)


def test_ausgrid_errors(tmp_path):
    p = tmp_path / "w.csv"
    write_wide(p, [day_row("1", "1/07/2011")])
    with pytest.raises(NotFoundError):
        ausgrid_wide_to_long(p, 2076)
    write_wide(p, [day_row("2076", "1/07/2011", vals=["0"] * 40)])
    with pytest.raises(DataError):
        ausgrid_wide_to_long(p, 2076)
    write_wide(p, [], header=HEADER[:30])
    with pytest.raises(DataError, match="48"):
        ausgrid_wide_to_long(p, 2076)


def test_ausgrid_gap_handling(tmp_path):
    vals = [f"{0.1:.3f}"] * 48
    vals[2] = ""  # 01:00 night gap -> 0
    vals[20] = ""  # 10:00 single daytime gap -> interpolated
    vals[19], vals[21] = "0.2", "0.4"
    long_gap = [f"{0.1:.3f}"] * 48
    long_gap[24] = long_gap[25] = ""  # two daytime steps -> day dropped
    p = tmp_path / "w.csv"
    write_wide(p, [day_row("7", "1/07/2011", vals=vals), day_row("7", "2/07/2011", vals=long_gap)])
    recs = ausgrid_wide_to_long(p, 7)
    assert len(recs) == 48
    assert recs[2].kwh == 0.0 and recs[20].kwh == pytest.approx(0.3)


def test_scaler_examples():
    sc = ScalerParams(0.0, 2.0)
    assert sc.apply(1.0) == 0.0 and sc.apply(0.0) == -1.0 and sc.apply(2.0) == 1.0
    assert sc.apply(3.0) == 2.0  # outside the fitted range is allowed
    with pytest.raises(ContractError):
        fit_apply_scaler(np.ones(5))


def test_scaler_round_trip():
    x = np.random.default_rng(0).uniform(-50, 50, size=1000)
    sc, scaled = fit_apply_scaler(x)
    assert scaled.min() == -1.0 and scaled.max() == 1.0
    assert np.max(np.abs(sc.invert(scaled) - x)) < 1e-12


def test_sklearn_scaler():
    x = np.arange(12.0).reshape(4, 3)
    s = SymmetricMinMaxScaler().fit(x)
    assert s.transform(x).min() == -1.0
    assert np.allclose(s.inverse_transform(s.transform(x)), x)


def test_make_windows():
    s = np.arange(100.0)
    ds = make_windows(s, 96)
    assert len(ds) == 4 and ds.X[0].tolist() == list(range(96)) and ds.y.tolist() == [96, 97, 98, 99]
    one = make_windows(np.arange(97.0), 96)
    assert len(one) == 1 and one.y[0] == 96
    assert np.array_equal(ds.X[1, :-1], ds.X[0, 1:])
    with pytest.raises(ContractError):
        make_windows(np.arange(96.0), 96)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 40))
def test_windows_reconstruct_series(L, extra):
    s = np.random.default_rng(L * 100 + extra).normal(size=L + extra)
    ds = make_windows(s, L)
    assert np.array_equal(np.concatenate([ds.X[0], ds.y]), s)


def test_split():
    ds = make_windows(np.arange(20.0), 10)
    tr, te = split(ds, 0.8)
    assert (len(tr), len(te)) == (8, 2)
    assert np.array_equal(np.concatenate([tr.y, te.y]), ds.y)
    assert len({len(split(ds, r)[0]) for r in (0.8, 0.7, 0.6, 0.5)}) == 4
    with pytest.raises(ContractError):
        split(ds, 1.0)


def test_prepare_datasets_fits_scaler_on_train_only():
    s = np.concatenate([np.linspace(0, 1, 80), np.full(20, 5.0)])
    tr, te, sc = prepare_datasets(s, lags=4, train_ratio=0.5)
    assert sc.max <= 1.0
    assert te.y.max() > 1.0  # test data may leave (-1, 1)
    assert np.allclose(sc.invert(tr.y), s[4:4 + len(tr)])


def test_subsets():
    recs = solar_records(400)
    six = select_subset(recs, "six-months")
    assert six[-1].timestamp < datetime(2012, 1, 1) <= recs[-1].timestamp
    assert six[-1].timestamp.month == 12
    day = select_subset(recs[:48], "intraday")
    assert len(day) == 18
    assert day[0].timestamp.time().isoformat() == "07:30:00" and day[-1].timestamp.time().isoformat() == "16:00:00"
    assert select_subset(recs, "full") == recs
    with pytest.raises(ContractError):
        select_subset(recs, "weekly")
