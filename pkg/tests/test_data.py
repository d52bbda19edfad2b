import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dyncov import data
from dyncov.errors import EmptyFile, HeaderMismatch, NonPositivePrice, ZeroVarianceColumn


def _write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadCsv:
    def test_three_lines(self, tmp_path):
        t = data.load_csv(_write(tmp_path, "date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,1.5,2.5\n"))
        assert t.values.shape == (2, 2)
        assert t.columns == ["a", "b"]
        assert t.timestamps == ["2020-01-01", "2020-01-02"]

    def test_corrupt_row_dropped(self, tmp_path):
        t = data.load_csv(_write(tmp_path, "a,b\n1,2\nx,3\n4,5\n"))
        assert t.dropped == 1
        np.testing.assert_array_equal(t.values, [[1, 2], [4, 5]])

    def test_ragged_row_dropped(self, tmp_path):
        t = data.load_csv(_write(tmp_path, "a,b\n1,2\n3\n"))
        assert t.dropped == 1 and t.values.shape == (1, 2)

    def test_integer_index_column(self, tmp_path):
        t = data.load_csv(_write(tmp_path, "t,x\n0,0.5\n1,0.25\n"))
        assert t.columns == ["x"]
        assert t.values[:, 0].tolist() == [0.5, 0.25]

    def test_header_only(self, tmp_path):
        with pytest.raises(EmptyFile):
            data.load_csv(_write(tmp_path, "a,b\n"))

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyFile):
            data.load_csv(_write(tmp_path, ""))

    def test_numeric_header(self, tmp_path):
        with pytest.raises(HeaderMismatch):
            data.load_csv(_write(tmp_path, "1,2\n3,4\n"))

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_csv(str(tmp_path / "nope.csv"))


class TestReturns:
    def _table(self, prices):
        P = np.asarray(prices, dtype=float).reshape(len(prices), -1)
        return data.RawTable([f"p{i}" for i in range(P.shape[1])], P)

    def test_log_return_of_e(self):
        r = data.to_returns(self._table([1.0, math.e]))
        assert r.values[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_simple(self):
        r = data.to_returns(self._table([100.0, 110.0]), "simple")
        assert r.values[0, 0] == pytest.approx(0.10, abs=1e-14)

    def test_constant_prices_gap_dropped(self, caplog):
        r = data.to_returns(self._table([5.0] * 6))
        assert r.values.shape[0] == 0
        assert r.dropped == 5
        assert any("stale" in m for m in caplog.messages)

    def test_short_flat_run_kept(self):
        r = data.to_returns(self._table([5.0] * 5 + [6.0]))
        assert r.values.shape[0] == 5
        assert r.dropped == 0

    def test_gap_inside_series(self):
        p = [1.0, 2.0] + [3.0] * 7 + [4.0]
        r = data.to_returns(self._table(p))
        np.testing.assert_allclose(r.values[:, 0], np.log([2.0, 1.5, 4 / 3]))

    def test_non_positive(self):
        with pytest.raises(NonPositivePrice):
            data.to_returns(self._table([1.0, 0.0]))
        # simple returns tolerate it
        data.to_returns(self._table([1.0, 0.0]), "simple")


class TestStandardize:
    def test_hand_column(self):
        ds = data.standardize(data.ReturnSeries(np.array([[0.0], [2.0]])))
        np.testing.assert_allclose(ds.series.values[:, 0], [-1.0, 1.0], atol=1e-15)
        assert ds.standardized

    def test_zero_variance(self):
        with pytest.raises(ZeroVarianceColumn):
            data.standardize(data.ReturnSeries(np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 3.0]])))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (30, 3), elements=st.floats(-1e3, 1e3)))
    def test_idempotent(self, X):
        if np.any(X.std(axis=0) < 1e-3 * np.maximum(1.0, np.abs(X).max(axis=0))):
            return
        Z = data.standardize(data.ReturnSeries(X)).series.values
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-12)
        Z2 = data.standardize(data.ReturnSeries(Z)).series.values
        np.testing.assert_allclose(Z2, Z, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-1e300, 1e300, allow_subnormal=True)))
def test_csv_roundtrip_lossless(X):
    buf = io.StringIO()
    data.write_series_csv(X, buf)
    rows = [line.split(",")[1:] for line in buf.getvalue().splitlines()[1:]]
    back = np.array([[float(v) for v in r] for r in rows])
    np.testing.assert_array_equal(back, X)
