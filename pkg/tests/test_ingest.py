import numpy as np
import pandas as pd
import pytest

from app.errors import ConfigurationError, IngestionError
from app.services.ingest import TimeSeries, ingest_csv


def hourly(hours, start="2021-06-01T00:00:00"):
    base = pd.Timestamp(start)
    return [((base + pd.Timedelta(hours=h)).strftime("%Y-%m-%dT%H:%M:%S"), float(h)) for h in hours]


class TestIngestCsv:
    """Test CSV ingestion, down-sampling and gap handling."""

    def test_reads_regular_series(self, write_csv):
        """Test a clean hourly file is read unchanged."""
        series = ingest_csv(write_csv(hourly(range(10))))
        np.testing.assert_array_equal(series.values, np.arange(10.0))
        assert series.sampling_interval_hours == 1.0
        assert series.gaps == []

    def test_down_sampling(self, write_csv):
        """Test keeping every second row doubles the interval."""
        path = write_csv(hourly(range(0, 20, 2)))
        series = ingest_csv(path, down_sample_k=2)
        np.testing.assert_array_equal(series.values, [0.0, 4.0, 8.0, 12.0, 16.0])
        assert series.sampling_interval_hours == 4.0

    def test_rejects_bad_down_sample(self, write_csv):
        """Test k must be a positive integer."""
        with pytest.raises(ConfigurationError):
            ingest_csv(write_csv(hourly(range(5))), down_sample_k=0)

    def test_gap_and_longest_block(self, write_csv):
        """Test a gap is reported and the longer block is kept."""
        path = write_csv(hourly(list(range(5)) + list(range(8, 16))))
        series = ingest_csv(path)
        assert len(series.gaps) == 1
        gap = series.gaps[0]
        assert gap.missing_steps == 3
        assert gap.line == 7
        assert gap.after == "2021-06-01T04:00:00"
        assert gap.before == "2021-06-01T08:00:00"
        np.testing.assert_array_equal(series.values, np.arange(8.0, 16.0))

    def test_gap_kept_when_asked(self, write_csv):
        """Test the whole series survives without block selection."""
        path = write_csv(hourly(list(range(5)) + list(range(8, 16))))
        series = ingest_csv(path, longest_block=False)
        assert len(series) == 13
        assert series.gaps[0].to_dict()["missing_steps"] == 3

    def test_unparseable_rows(self, write_csv):
        """Test bad rows are reported by file line number."""
        rows = hourly(range(4))
        rows[1] = (rows[1][0], "abc")
        with pytest.raises(IngestionError) as excinfo:
            ingest_csv(write_csv(rows))
        assert excinfo.value.details["lines"] == [3]

    def test_non_monotone_timestamps(self, write_csv):
        """Test repeated timestamps are rejected with their line."""
        with pytest.raises(IngestionError) as excinfo:
            ingest_csv(write_csv(hourly([0, 1, 1, 3])))
        assert excinfo.value.details["lines"] == [4]

    def test_missing_columns(self, write_csv):
        """Test the header must name timestamp and value."""
        with pytest.raises(IngestionError):
            ingest_csv(write_csv(hourly(range(3)), header="time,reading"))

    def test_missing_file(self, tmp_path):
        """Test an unreadable path is an ingestion error."""
        with pytest.raises(IngestionError):
            ingest_csv(str(tmp_path / "absent.csv"))


class TestTimeSeries:
    """Test the series container."""

    def test_regular_timestamps(self):
        """Test a regular series gets evenly spaced timestamps."""
        series = TimeSeries.regular([1.0, 2.0, 3.0], 0.5, "2020-01-01T00:00:00")
        assert series.to_dict()["timestamps"][-1] == "2020-01-01T01:00:00"

    def test_from_dict(self):
        """Test an inline payload with explicit timestamps."""
        series = TimeSeries.from_dict({
            "values": [1, 2],
            "timestamps": ["2020-01-01T00:00:00", "2020-01-01T06:00:00"],
            "sampling_interval_hours": 6,
        })
        assert series.sampling_interval_hours == 6.0
        assert list(series.to_frame().columns) == ["timestamp", "value"]

    def test_rejects_non_finite(self):
        """Test missing values in an inline series are refused."""
        with pytest.raises(IngestionError):
            TimeSeries.from_dict({"values": [1.0, None, 2.0]})

    def test_rejects_length_mismatch(self):
        """Test values and timestamps must line up."""
        with pytest.raises(ConfigurationError):
            TimeSeries.from_dict({"values": [1.0], "timestamps": ["2020-01-01", "2020-01-02"]})
