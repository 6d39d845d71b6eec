import csv
import json

import numpy as np
import pytest

from ctxad.adapters import kpi_format, nasa_format, smd_format, yahoo_format
from ctxad.io import DataError, read_dataset, read_series_csv, write_dataset, write_series_csv
from ctxad.series import LabelState, TimeSeries


class TestCanonicalCSV:
    def test_round_trip_bit_exact(self, tmp_path):
        values = np.random.default_rng(0).normal(size=(20, 3)) * 1e5
        values[3, 1] = np.nan
        labels = np.random.default_rng(1).integers(-1, 2, size=20)
        s = TimeSeries("x", values, labels)
        write_series_csv(s, tmp_path / "x.csv")
        back = read_series_csv(tmp_path / "x.csv")
        assert back == s
        assert (tmp_path / "x.csv").read_text().splitlines()[0] == "timestamp,ch_0,ch_1,ch_2,label"

    def test_timestamps_preserved(self, tmp_path):
        s = TimeSeries("x", [1.0, 2.0], [0, 1], timestamps=np.array([100, 160]))
        write_series_csv(s, tmp_path / "x.csv")
        np.testing.assert_array_equal(read_series_csv(tmp_path / "x.csv").timestamps, [100, 160])

    @pytest.mark.parametrize(
        "text",
        [
            "time,ch_0,label\n0,1.0,0\n",
            "timestamp,ch_0,foo,label\n0,1.0,2.0,0\n",
            "timestamp,ch_0,label\n0,abc,0\n",
            "timestamp,ch_0,label\n0,1.0,7\n",
            "timestamp,ch_0,label\n0,1.0\n",
            "timestamp,ch_0,label\n",
        ],
    )
    def test_malformed(self, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(DataError):
            read_series_csv(tmp_path / "bad.csv")

    def test_manifest_round_trip(self, tmp_path):
        train = [TimeSeries("a/1", np.arange(5.0)), TimeSeries("b", np.ones((4, 2)), [0, 1, 0, -1])]
        test = [TimeSeries("a/1", np.arange(3.0), [0, 1, 0])]
        path = write_dataset(tmp_path, {"train": train, "test": test}, {"note": 1})
        manifest = json.loads(path.read_text())
        assert manifest["provenance"] == {"note": 1}
        back = read_dataset(tmp_path)
        assert list(back["train"]) == train and list(back["test"]) == test
        assert list(read_dataset(path, "test")["test"]) == test

    def test_missing_split(self, tmp_path):
        write_dataset(tmp_path, {"train": [TimeSeries("a", [1.0])]})
        with pytest.raises(DataError):
            read_dataset(tmp_path, "test")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path)


def _round_trip(splits, tmp_path):
    write_dataset(tmp_path / "out", splits)
    back = read_dataset(tmp_path / "out")
    for split, series in splits.items():
        assert list(back[split]) == list(series)
    return back


class TestAdapters:
    def test_nasa(self, fixtures, tmp_path):
        splits = nasa_format(fixtures / "nasa")
        assert [s.id for s in splits["test"]] == ["A-1", "P-2", "T-3"]
        raw = np.load(fixtures / "nasa" / "test" / "A-1.npy")
        a1 = splits["test"][0]
        np.testing.assert_array_equal(a1.values, raw.astype(np.float64))
        assert np.flatnonzero(a1.labels == LabelState.ANOMALOUS).tolist() == [10, 11, 12, 13, 14, 30, 31]
        assert (splits["train"][0].labels == LabelState.UNLABELED).all()
        _round_trip(splits, tmp_path)

    def test_smd(self, fixtures, tmp_path):
        splits = smd_format(fixtures / "smd")
        assert len(splits["train"]) == 3 and splits["test"][0].channels == 4
        raw = np.loadtxt(fixtures / "smd" / "test" / "machine-1-1.txt", delimiter=",")
        np.testing.assert_array_equal(splits["test"][0].values, raw)
        _round_trip(splits, tmp_path)

    def test_yahoo_split(self, fixtures, tmp_path):
        splits = yahoo_format(fixtures / "yahoo")
        assert [s.length for s in (splits["train"][0], splits["validation"][0], splits["test"][0])] == [12, 8, 20]
        whole = yahoo_format(fixtures / "yahoo", split=False)["test"]
        with (fixtures / "yahoo" / "A1Benchmark" / "real_1.csv").open() as fh:
            raw = [float(r["value"]) for r in csv.DictReader(fh)]
        assert whole[0].values[:, 0].tolist() == raw
        back = _round_trip(splits, tmp_path)
        np.testing.assert_array_equal(back["test"][0].timestamps, splits["test"][0].timestamps)

    def test_kpi(self, fixtures, tmp_path):
        splits = kpi_format(fixtures / "kpi" / "kpi.csv")
        assert len(splits["train"]) == 3
        assert all((s.labels == LabelState.ANOMALOUS).sum() == 1 for s in splits["train"])
        _round_trip(splits, tmp_path)

    def test_unknown_columns(self, tmp_path):
        (tmp_path / "k.csv").write_text("timestamp,value,label,KPI ID,extra\n1,2,0,a,9\n")
        with pytest.raises(DataError, match="extra"):
            kpi_format(tmp_path / "k.csv")
        (tmp_path / "y").mkdir()
        (tmp_path / "y" / "s.csv").write_text("timestamp,value,is_anomaly,bogus\n" + "1,2,0,0\n" * 12)
        with pytest.raises(DataError, match="bogus"):
            yahoo_format(tmp_path / "y")

    def test_missing_layout(self, tmp_path):
        with pytest.raises(DataError):
            nasa_format(tmp_path)
        with pytest.raises(DataError):
            smd_format(tmp_path)
