"""Click and photon stream containers and their file formats."""

import numpy as np
import pytest

from photonstat.model import ChargeTag
from photonstat.streams import (
    ClickStream,
    PhotonStream,
    read_clicks_binary,
    read_clicks_csv,
    read_photons_csv,
    stream_digest,
    write_clicks_binary,
    write_clicks_csv,
    write_photons_csv,
)


@pytest.fixture
def clicks():
    ts = np.sort(np.random.default_rng(0).integers(0, 10**12, 5000))
    return ClickStream(detector_id=1, timestamps=ts)


@pytest.fixture
def photons():
    return PhotonStream(
        pulse_index=np.array([0, 0, 3, 7]),
        emission_time=np.array([120.5, 310.0, 98.25, 40000.0]),
        complex_index=np.array([0, 0, 1, 0]),
        is_reexcitation=np.array([False, True, False, False]),
        complex_tags=(ChargeTag.XMINUS, ChargeTag.X),
    )


class TestClickStream:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError, match="sorted"):
            ClickStream(detector_id=0, timestamps=np.array([5, 3, 9]))

    def test_rejects_matrix(self):
        with pytest.raises(ValueError, match="one-dimensional"):
            ClickStream(detector_id=0, timestamps=np.zeros((2, 2), dtype=np.int64))

    def test_len(self, clicks):
        assert len(clicks) == 5000


class TestBinaryFormat:
    def test_roundtrip(self, clicks, tmp_path):
        path = tmp_path / "a.pstm"
        write_clicks_binary(path, clicks)
        back = read_clicks_binary(path)
        assert back.detector_id == clicks.detector_id
        np.testing.assert_array_equal(back.timestamps, clicks.timestamps)

    def test_empty_stream_roundtrip(self, tmp_path):
        path = tmp_path / "empty.pstm"
        write_clicks_binary(path, ClickStream(detector_id=0, timestamps=np.array([], dtype=np.int64)))
        assert len(read_clicks_binary(path)) == 0

    def test_bad_magic_rejected(self, clicks, tmp_path):
        path = tmp_path / "a.pstm"
        write_clicks_binary(path, clicks)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            read_clicks_binary(path)

    def test_unknown_version_rejected(self, clicks, tmp_path):
        path = tmp_path / "a.pstm"
        write_clicks_binary(path, clicks)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            read_clicks_binary(path)

    def test_truncated_payload_rejected(self, clicks, tmp_path):
        path = tmp_path / "a.pstm"
        write_clicks_binary(path, clicks)
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(ValueError):
            read_clicks_binary(path)


class TestCsvFormats:
    def test_clicks_roundtrip(self, clicks, tmp_path):
        path = tmp_path / "a.csv"
        write_clicks_csv(path, clicks)
        back = read_clicks_csv(path, detector_id=clicks.detector_id)
        np.testing.assert_array_equal(back.timestamps, clicks.timestamps)

    def test_photons_roundtrip(self, photons, tmp_path):
        path = tmp_path / "p.csv"
        write_photons_csv(path, photons)
        back = read_photons_csv(path)
        np.testing.assert_array_equal(back.pulse_index, photons.pulse_index)
        np.testing.assert_array_equal(back.emission_time, photons.emission_time)
        np.testing.assert_array_equal(back.is_reexcitation, photons.is_reexcitation)
        assert [r.complex_tag for r in back] == [r.complex_tag for r in photons]


class TestPhotonStream:
    def test_column_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal length"):
            PhotonStream(
                pulse_index=np.array([0, 1]),
                emission_time=np.array([1.0]),
                complex_index=np.array([0, 0]),
                is_reexcitation=np.array([False, False]),
                complex_tags=(ChargeTag.X,),
            )

    def test_absolute_times(self, photons):
        out = photons.absolute_times(12_500.0)
        np.testing.assert_allclose(out[2], 3 * 12_500.0 + 98.25)

    def test_record_access(self, photons):
        rec = photons[1]
        assert rec.is_reexcitation
        assert rec.complex_tag is ChargeTag.XMINUS


class TestDigest:
    def test_sensitive_to_data_and_detector(self, clicks):
        d0 = stream_digest(clicks)
        assert d0 == stream_digest(clicks)
        moved = ClickStream(detector_id=clicks.detector_id, timestamps=clicks.timestamps + 1)
        assert stream_digest(moved) != d0
        renamed = ClickStream(detector_id=clicks.detector_id + 1, timestamps=clicks.timestamps)
        assert stream_digest(renamed) != d0

    def test_survives_file_roundtrip(self, clicks, tmp_path):
        path = tmp_path / "a.pstm"
        write_clicks_binary(path, clicks)
        assert stream_digest(read_clicks_binary(path)) == stream_digest(clicks)
