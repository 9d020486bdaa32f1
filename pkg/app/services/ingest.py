"""
Time series container and CSV ingestion for field sensor records.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from app.errors import ConfigurationError, IngestionError

DEFAULT_START = "2000-01-01T00:00:00"


@dataclass(frozen=True)
class Gap:
    after: str
    before: str
    missing_steps: int
    line: int

    def to_dict(self):
        return {"after": self.after, "before": self.before, "missing_steps": self.missing_steps, "line": self.line}


@dataclass(eq=False)
class TimeSeries:
    values: np.ndarray
    timestamps: pd.DatetimeIndex
    sampling_interval_hours: float
    source: str = "inline"
    gaps: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.timestamps = pd.DatetimeIndex(self.timestamps)
        if self.values.size != self.timestamps.size:
            raise ConfigurationError("Series values and timestamps differ in length",
                                     values=self.values.size, timestamps=self.timestamps.size)
        if not self.sampling_interval_hours > 0:
            raise ConfigurationError("Sampling interval must be positive",
                                     sampling_interval_hours=self.sampling_interval_hours)
        if not np.all(np.isfinite(self.values)):
            raise IngestionError("Series contains non-finite values", source=self.source)

    def __len__(self):
        return self.values.size

    @classmethod
    def regular(cls, values, sampling_interval_hours=1.0, start=DEFAULT_START, source="inline"):
        values = np.asarray(values, dtype=float)
        timestamps = pd.date_range(start=pd.Timestamp(start), periods=values.size,
                                   freq=pd.Timedelta(hours=sampling_interval_hours))
        return cls(values, timestamps, float(sampling_interval_hours), source)

    @classmethod
    def from_dict(cls, data):
        """Inline series payload: values, optional timestamps and sampling interval."""
        if not isinstance(data, dict) or "values" not in data:
            raise ConfigurationError("Inline series needs a 'values' list")
        try:
            values = np.asarray(data["values"], dtype=float)
        except (TypeError, ValueError):
            raise IngestionError("Inline series values must be numbers")
        interval = float(data.get("sampling_interval_hours", 1.0))
        if data.get("timestamps") is None:
            return cls.regular(values, interval, data.get("start", DEFAULT_START))
        try:
            timestamps = pd.to_datetime(data["timestamps"], format="ISO8601")
        except (TypeError, ValueError) as e:
            raise IngestionError(f"Inline series timestamps are not ISO-8601: {e}")
        return cls(values, timestamps, interval)

    def to_frame(self):
        return pd.DataFrame({"timestamp": self.timestamps.strftime("%Y-%m-%dT%H:%M:%S"), "value": self.values})

    def to_dict(self):
        return {
            "timestamps": self.timestamps.strftime("%Y-%m-%dT%H:%M:%S").tolist(),
            "values": self.values.tolist(),
            "sampling_interval_hours": self.sampling_interval_hours,
        }


def _timestamp_text(value):
    return pd.Timestamp(value).strftime("%Y-%m-%dT%H:%M:%S")


def ingest_csv(path, down_sample_k=1, longest_block=True):
    """Read a timestamp,value CSV, keep every k-th row and report gaps."""
    if int(down_sample_k) != down_sample_k or down_sample_k < 1:
        raise ConfigurationError("Down-sample factor must be a positive integer", down_sample=down_sample_k)
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestionError(f"Could not read {path}: {e}", path=str(path))

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = {"timestamp", "value"} - set(frame.columns)
    if missing:
        raise IngestionError("CSV must have 'timestamp' and 'value' columns", missing=sorted(missing))

    # Header is line 1, the first data row is line 2.
    lines = frame.index.to_numpy() + 2
    timestamps = pd.to_datetime(frame["timestamp"], errors="coerce", format="ISO8601")
    values = pd.to_numeric(frame["value"], errors="coerce")
    unparseable = (timestamps.isna() | values.isna()).to_numpy()
    if unparseable.any():
        raise IngestionError("Unparseable rows", path=str(path), lines=lines[unparseable].tolist())

    non_monotone = np.flatnonzero((timestamps.diff() <= pd.Timedelta(0)).to_numpy())
    if non_monotone.size:
        raise IngestionError("Timestamps must be strictly increasing", path=str(path),
                             lines=lines[non_monotone].tolist())

    keep = slice(None, None, int(down_sample_k))
    timestamps = pd.DatetimeIndex(timestamps.iloc[keep])
    values = values.iloc[keep].to_numpy(dtype=float)
    lines = lines[keep]
    if values.size < 2:
        raise IngestionError("Need at least two rows to infer the sampling interval", path=str(path))

    deltas = pd.Series(timestamps[1:] - timestamps[:-1])
    modal = deltas.mode().iloc[0]
    gap_positions = np.flatnonzero((deltas > modal).to_numpy())
    gaps = []
    for position in gap_positions:
        ratio = deltas.iloc[position] / modal
        gap = Gap(
            after=_timestamp_text(timestamps[position]),
            before=_timestamp_text(timestamps[position + 1]),
            missing_steps=max(int(round(ratio)) - 1, 1),
            line=int(lines[position + 1]),
        )
        logging.warning(f"Gap of {gap.missing_steps} samples in {path} between {gap.after} and {gap.before}")
        gaps.append(gap)

    if longest_block and gaps:
        edges = np.concatenate([[0], gap_positions + 1, [values.size]])
        sizes = np.diff(edges)
        best = int(np.argmax(sizes))
        timestamps = timestamps[edges[best]:edges[best + 1]]
        values = values[edges[best]:edges[best + 1]]
        logging.info(f"Using the longest contiguous block of {values.size} samples starting {timestamps[0]}")

    interval_hours = modal / pd.Timedelta(hours=1)
    logging.info(f"Ingested {values.size} rows from {path} at {interval_hours} h sampling")
    return TimeSeries(values, timestamps, float(interval_hours), str(path), gaps)
