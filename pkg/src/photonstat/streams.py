"""Photon and click streams, with the on-disk formats.

Click streams serialize to a little-endian binary format:

    magic   4 bytes  b"PSTM"
    version u16
    detector_id u16
    count   u64
    count timestamps, u64, picoseconds, sorted ascending

and alternatively to CSV with one timestamp per line.  Photon records
serialize to CSV with columns pulse_index, time_ps, complex, is_reexcitation.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .model import ChargeTag

__all__ = [
    "PhotonRecord",
    "PhotonStream",
    "ClickStream",
    "write_clicks_binary",
    "read_clicks_binary",
    "write_clicks_csv",
    "read_clicks_csv",
    "write_photons_csv",
    "read_photons_csv",
    "stream_digest",
]

STREAM_MAGIC = b"PSTM"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")


@dataclass(frozen=True)
class PhotonRecord:
    """One emission event.

    emission_time is ps since the originating pulse and may exceed the pulse
    period (slow emissions wrap into later periods rather than being
    discarded).
    """

    pulse_index: int
    emission_time: float
    complex_tag: ChargeTag
    is_reexcitation: bool


class PhotonStream:
    """Column-oriented sequence of :class:`PhotonRecord`, time ordered.

    Rows are materialized on access; bulk work should use the column arrays
    directly.
    """

    def __init__(
        self,
        pulse_index: np.ndarray,
        emission_time: np.ndarray,
        complex_index: np.ndarray,
        is_reexcitation: np.ndarray,
        complex_tags: Sequence[ChargeTag],
    ):
        self.pulse_index = np.asarray(pulse_index, dtype=np.int64)
        self.emission_time = np.asarray(emission_time, dtype=np.float64)
        self.complex_index = np.asarray(complex_index, dtype=np.int16)
        self.is_reexcitation = np.asarray(is_reexcitation, dtype=bool)
        self.complex_tags = tuple(complex_tags)
        n = self.pulse_index.size
        if not (self.emission_time.size == self.complex_index.size == self.is_reexcitation.size == n):
            raise ValueError("photon columns must have equal length")

    def __len__(self) -> int:
        return int(self.pulse_index.size)

    def __getitem__(self, i: int) -> PhotonRecord:
        return PhotonRecord(
            pulse_index=int(self.pulse_index[i]),
            emission_time=float(self.emission_time[i]),
            complex_tag=self.complex_tags[int(self.complex_index[i])],
            is_reexcitation=bool(self.is_reexcitation[i]),
        )

    def __iter__(self) -> Iterator[PhotonRecord]:
        for i in range(len(self)):
            yield self[i]

    def absolute_times(self, rep_period_ps: float) -> np.ndarray:
        """Emission times on the experiment clock, ps."""
        return self.pulse_index * rep_period_ps + self.emission_time


@dataclass(frozen=True)
class ClickStream:
    """Detector clicks: sorted int64 timestamps in ps plus provenance.

    meta carries the digest of the originating configuration; it is empty for
    streams loaded from the binary format, which does not store it.
    """

    detector_id: int
    timestamps: np.ndarray
    meta: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        object.__setattr__(self, "timestamps", ts)
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if ts.size > 1 and np.any(np.diff(ts) < 0):
            raise ValueError("timestamps must be sorted ascending")

    def __len__(self) -> int:
        return int(self.timestamps.size)


def _stream_bytes(stream: ClickStream) -> bytes:
    ts = stream.timestamps
    if ts.size and ts[0] < 0:
        raise ValueError("negative timestamps cannot be serialized")
    header = _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, stream.detector_id, ts.size)
    return header + ts.astype("<u8").tobytes()


def write_clicks_binary(path, stream: ClickStream) -> None:
    Path(path).write_bytes(_stream_bytes(stream))


def read_clicks_binary(path) -> ClickStream:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated click-stream file")
    magic, version, detector_id, count = _HEADER.unpack_from(raw)
    if magic != STREAM_MAGIC:
        raise ValueError(f"{path}: not a click-stream file (bad magic {magic!r})")
    if version > STREAM_VERSION:
        raise ValueError(f"{path}: unsupported click-stream version {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != 8 * count:
        raise ValueError(f"{path}: payload length does not match declared count {count}")
    ts = np.frombuffer(payload, dtype="<u8").astype(np.int64)
    return ClickStream(detector_id=detector_id, timestamps=ts)


def write_clicks_csv(path, stream: ClickStream) -> None:
    """One timestamp per line, for interoperability."""
    with open(path, "w") as fh:
        for t in stream.timestamps:
            fh.write(f"{int(t)}\n")


def read_clicks_csv(path, detector_id: int = 0) -> ClickStream:
    ts = np.loadtxt(path, dtype=np.int64, ndmin=1) if Path(path).stat().st_size else np.empty(0, np.int64)
    return ClickStream(detector_id=detector_id, timestamps=np.sort(ts))


def write_photons_csv(path, photons: PhotonStream) -> None:
    with open(path, "w") as fh:
        fh.write("pulse_index,time_ps,complex,is_reexcitation\n")
        tags = [t.value for t in photons.complex_tags]
        # repr of a plain float is the shortest string that parses back to
        # the same bits, so the file round-trips exactly
        for i in range(len(photons)):
            fh.write(
                f"{photons.pulse_index[i]},{float(photons.emission_time[i])!r},"
                f"{tags[photons.complex_index[i]]},{int(photons.is_reexcitation[i])}\n"
            )


def read_photons_csv(path) -> PhotonStream:
    pulses: list[int] = []
    times: list[float] = []
    tags: list[str] = []
    reex: list[bool] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "pulse_index,time_ps,complex,is_reexcitation":
            raise ValueError(f"{path}: unexpected photon CSV header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            p, t, c, r = line.split(",")
            pulses.append(int(p))
            times.append(float(t))
            tags.append(c)
            reex.append(bool(int(r)))
    tag_order = tuple(dict.fromkeys(tags))
    index = {t: i for i, t in enumerate(tag_order)}
    return PhotonStream(
        pulse_index=np.array(pulses, dtype=np.int64),
        emission_time=np.array(times, dtype=np.float64),
        complex_index=np.array([index[t] for t in tags], dtype=np.int16),
        is_reexcitation=np.array(reex, dtype=bool),
        complex_tags=tuple(ChargeTag(t) for t in tag_order),
    )


def stream_digest(stream: ClickStream) -> str:
    """SHA-256 over the binary serialization, used as report provenance."""
    return hashlib.sha256(_stream_bytes(stream)).hexdigest()
