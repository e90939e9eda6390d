"""Container format round trips, fault injection, PGM/PBM/CSV output."""

import struct

import numpy as np
import pytest

from reconkit import containers, sampling
from reconkit.containers import (ChecksumError, FormatError, TruncationError,
                                 VersionError)


@pytest.fixture
def record(small_record):
    return small_record


class TestContainer:
    def test_roundtrip_byte_identical_arrays(self, tmp_path):
        arrays = {
            "a": np.arange(12, dtype=np.float32).reshape(3, 4),
            "z": (np.arange(6) + 1j * np.arange(6)).astype(np.complex64).reshape(2, 3),
        }
        path = tmp_path / "t.cks"
        containers.write_container(path, "record", {"k": 1}, arrays)
        kind, meta, back = containers.read_container(path)
        assert kind == "record" and meta == {"k": 1}
        for name in arrays:
            assert back[name].dtype == arrays[name].dtype
            assert np.array_equal(back[name], arrays[name])

    def test_bad_magic_is_format_error(self, tmp_path):
        path = tmp_path / "t.cks"
        containers.write_container(path, "mask", {}, {"keep": np.ones((2, 2))})
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            containers.read_container(path)

    def test_truncation_reports_offset(self, tmp_path):
        path = tmp_path / "t.cks"
        containers.write_container(path, "mask", {}, {"keep": np.ones((8, 8))})
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(TruncationError) as err:
            containers.read_container(path)
        assert err.value.offset == len(blob) // 2

    def test_checksum_error_on_payload_corruption(self, tmp_path):
        path = tmp_path / "t.cks"
        containers.write_container(path, "mask", {}, {"keep": np.ones((4, 4))})
        blob = bytearray(path.read_bytes())
        blob[-10] ^= 0x01          # flip a bit inside the last array
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            containers.read_container(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "t.cks"
        containers.write_container(path, "mask", {}, {"keep": np.ones((2, 2))})
        blob = bytearray(path.read_bytes())
        # rewrite the version field inside the JSON header and fix the CRC
        hlen = struct.unpack_from("<I", blob, 8)[0]
        header = bytes(blob[12:12 + hlen]).replace(b'"version":1', b'"version":9')
        rest = bytes(blob[12 + hlen:-4])
        import zlib
        payload = header + rest
        out = blob[:12] + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
        path.write_bytes(bytes(out))
        with pytest.raises(VersionError):
            containers.read_container(path)

    def test_record_roundtrip(self, tmp_path, record):
        path = tmp_path / "rec.cks"
        containers.write_record(path, record)
        back = containers.read_record(path)
        # stored as float32/complex64: compare against the quantized original
        assert np.array_equal(back.reference, record.reference.astype(np.complex64).astype(np.complex128))
        assert np.array_equal(back.kspace, record.kspace.astype(np.complex64).astype(np.complex128))
        assert np.array_equal(back.mask.keep, record.mask.keep)
        assert np.array_equal(back.lesion_mask, record.lesion_mask)
        assert back.mask.kind == record.mask.kind
        assert back.meta["sigma"] == record.meta["sigma"]

    def test_written_records_roundtrip_exactly(self, tmp_path, record):
        # a second write/read of the already-quantized record is the identity
        p1, p2 = tmp_path / "a.cks", tmp_path / "b.cks"
        containers.write_record(p1, record)
        once = containers.read_record(p1)
        containers.write_record(p2, once)
        assert p1.read_bytes() == p2.read_bytes()

    def test_mask_roundtrip(self, tmp_path):
        mask = sampling.gaussian2d_mask(16, 16, 2.0, seed=3)
        path = tmp_path / "m.cks"
        containers.write_mask(path, mask)
        back = containers.read_mask(path)
        assert np.array_equal(back.keep, mask.keep)
        assert back.kind == "gaussian2d"
        assert back.requested_acceleration == 2.0

    def test_wrong_kind_rejected(self, tmp_path):
        mask = sampling.full_mask(4, 4)
        path = tmp_path / "m.cks"
        containers.write_mask(path, mask)
        with pytest.raises(FormatError):
            containers.read_record(path)

    def test_checkpoint_roundtrip(self, tmp_path):
        values = {"cascade0.conv1.weight": np.random.default_rng(0).standard_normal((2, 2, 3, 3)).astype(np.float32)}
        config = {"kind": "rim", "cell": {"channels": 2}}
        path = tmp_path / "ckpt.cks"
        containers.save_checkpoint(path, config, values, meta={"steps": 5})
        back_cfg, back_vals, extra = containers.load_checkpoint(path)
        assert back_cfg == config
        assert extra["steps"] == 5
        assert np.array_equal(back_vals["cascade0.conv1.weight"], values["cascade0.conv1.weight"])


class TestImages:
    def test_zero_image_all_zero_pgm(self, tmp_path):
        path = tmp_path / "z.pgm"
        containers.export_image(np.zeros((4, 6), dtype=complex), path)
        pixels = containers.import_pgm(path)
        assert pixels.shape == (4, 6)
        assert not pixels.any()

    def test_peak_maps_to_65535(self, tmp_path):
        img = np.zeros((5, 5))
        img[2, 3] = 2.5
        path = tmp_path / "p.pgm"
        containers.export_image(img, path)
        assert containers.import_pgm(path)[2, 3] == 65535

    def test_reimport_matches_quantization(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.standard_normal((9, 11)) + 1j * rng.standard_normal((9, 11))
        path = tmp_path / "q.pgm"
        containers.export_image(img, path)
        mag = np.abs(img)
        expected = np.round(mag / mag.max() * 65535).astype(np.uint16)
        assert np.array_equal(containers.import_pgm(path), expected)

    def test_pbm_packing(self, tmp_path):
        mask = sampling.equidistant1d_mask(4, 16, acceleration=4, center_frac=0.0, seed=0)
        path = tmp_path / "m.pbm"
        containers.export_mask_pbm(mask, path)
        blob = path.read_bytes()
        header, _, rest = blob.partition(b"\n4 16\n".replace(b"4 16", b"16 4"))
        assert blob.startswith(b"P4\n16 4\n")
        bits = np.unpackbits(np.frombuffer(blob.split(b"\n", 2)[2], dtype=np.uint8).reshape(4, 2), axis=1)
        assert np.array_equal(bits[:, :16], mask.keep.astype(np.uint8))


class TestMetricsCsv:
    def test_header_and_formatting(self):
        rows = [{"id": "0000", "method": "zerofill", "dataset": "d", "acc": 4.0,
                 "ssim": 0.5, "psnr_db": float("inf"), "cr": None, "wmn": 0.1,
                 "bgn": 0.2, "wa": None, "snr": 3.0, "wall_ms": 1.25}]
        blob = containers.metrics_csv_bytes(rows)
        lines = blob.decode().split("\r\n")
        assert lines[0] == "id,method,dataset,acc,ssim,psnr_db,cr,wmn,bgn,wa,snr,wall_ms"
        assert lines[1] == "0000,zerofill,d,4.000000,0.500000,inf,,0.100000,0.200000,,3.000000,1.250000"
        assert lines[-1] == ""

    def test_deterministic_bytes(self, tmp_path):
        rows = [{"id": "0000", "method": "cs", "dataset": "d", "acc": 2,
                 "ssim": 1 / 3, "psnr_db": 20.0, "cr": 0.1, "wmn": 0.2,
                 "bgn": 0.3, "wa": 0.4, "snr": 5.0, "wall_ms": 0.0}]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        containers.write_metrics_csv(p1, rows)
        containers.write_metrics_csv(p2, rows)
        assert p1.read_bytes() == p2.read_bytes()
