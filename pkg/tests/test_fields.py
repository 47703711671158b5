import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import random_fields
from fieldpose.fields import (B_MIN, SIGMA_MIN, DimensionMismatchError, FieldFormatError, FieldGeometry,
                              MalformedHeaderError, PafField, PifField, TruncatedPayloadError, fields_from_bytes,
                              fields_to_bytes, new_fields, read_fields, write_fields)


class TestGeometry:
    def test_for_image_rounds_up(self):
        g = FieldGeometry.for_image(641, 480, 8)
        assert (g.grid_w, g.grid_h) == (81, 60)
        assert g.extent == (648, 480)

    @pytest.mark.parametrize("args", [(0, 4, 4), (8, 0, 4), (8, 4, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            FieldGeometry(*args)


class TestNewFields:
    def test_shapes(self, skeleton):
        pif, paf = new_fields(FieldGeometry(8, 10, 10), skeleton)
        assert pif.data.shape == (17, 5, 10, 10)
        assert paf.data.shape == (19, 7, 10, 10)
        assert pif.data.dtype == np.float32

    def test_empty(self, skeleton):
        pif, paf = new_fields(FieldGeometry(8, 10, 10), skeleton)
        assert not pif.c.any() and not paf.c.any()
        np.testing.assert_array_equal(pif.data[:, 3], np.float32(B_MIN))
        np.testing.assert_array_equal(pif.data[:, 4], np.float32(SIGMA_MIN))
        np.testing.assert_array_equal(paf.data[:, [3, 6]], np.float32(B_MIN))
        pif.validate()
        paf.validate()


class TestValidate:
    def test_confidence_range(self, skeleton):
        pif, _ = new_fields(FieldGeometry(8, 3, 3), skeleton)
        pif.data[0, 0, 1, 1] = 1.5
        with pytest.raises(ValueError):
            pif.validate()

    def test_spread_floor_only_where_confident(self, skeleton):
        pif, paf = new_fields(FieldGeometry(8, 3, 3), skeleton)
        paf.data[2, 6, 0, 0] = 0.0
        paf.validate()  # background cell, ignored
        paf.data[2, 0, 0, 0] = 0.5
        with pytest.raises(ValueError):
            paf.validate()

    def test_non_finite(self, skeleton):
        pif, _ = new_fields(FieldGeometry(8, 3, 3), skeleton)
        pif.data[3, 1, 2, 2] = np.inf
        with pytest.raises(ValueError):
            pif.validate()


class TestSerialization:
    def test_round_trip_bit_exact(self, skeleton, tmp_path):
        rng = np.random.default_rng(0)
        pif, paf = random_fields(rng, skeleton)
        write_fields(tmp_path / "x.fields", pif, paf)
        pif2, paf2 = read_fields(tmp_path / "x.fields", skeleton)
        assert pif2.geometry == pif.geometry
        np.testing.assert_array_equal(pif2.data.view(np.uint32), pif.data.view(np.uint32))
        np.testing.assert_array_equal(paf2.data.view(np.uint32), paf.data.view(np.uint32))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 32),
           st.data())
    def test_arbitrary_float_payloads(self, gw, gh, stride, data):
        """Any float32 bit pattern survives, including NaN payloads and signed zeros."""
        words = hnp.arrays(np.uint32, (2, 5, gh, gw))
        pif = PifField(FieldGeometry(stride, gw, gh), data.draw(words).view(np.float32))
        paf = PafField(FieldGeometry(stride, gw, gh),
                       data.draw(hnp.arrays(np.uint32, (3, 7, gh, gw))).view(np.float32))
        pif2, paf2 = fields_from_bytes(fields_to_bytes(pif, paf))
        np.testing.assert_array_equal(pif2.data.view(np.uint32), pif.data.view(np.uint32))
        np.testing.assert_array_equal(paf2.data.view(np.uint32), paf.data.view(np.uint32))

    def test_layout_readable_independently(self, skeleton):
        """Header fields and [type, channel, row, col] float order, parsed with struct alone."""
        rng = np.random.default_rng(1)
        pif, paf = random_fields(rng, skeleton, grid=(3, 2), stride=4)
        buf = fields_to_bytes(pif, paf)
        assert buf[:4] == b"PFLD" and buf[4] == 1 and buf[5:8] == b"\0\0\0"
        assert struct.unpack_from("<7I", buf, 8) == (4, 3, 2, 17, 5, 19, 7)
        # PIF type 2, channel 3 (b), row 1, col 2
        idx = ((2 * 5 + 3) * 2 + 1) * 3 + 2
        (v,) = struct.unpack_from("<f", buf, 36 + 4 * idx)
        assert v == pif.data[2, 3, 1, 2]
        # PAF type 18, channel 6 (b2), row 0, col 1
        off = 36 + 4 * pif.data.size
        idx = ((18 * 7 + 6) * 2 + 0) * 3 + 1
        (v,) = struct.unpack_from("<f", buf, off + 4 * idx)
        assert v == paf.data[18, 6, 0, 1]
        assert len(buf) == 36 + 4 * (pif.data.size + paf.data.size)


class TestCorruption:
    @pytest.fixture
    def buf(self, skeleton):
        return fields_to_bytes(*new_fields(FieldGeometry(8, 4, 3), skeleton))

    def test_bad_magic(self, buf):
        with pytest.raises(MalformedHeaderError):
            fields_from_bytes(b"XXXX" + buf[4:])

    def test_bad_version(self, buf):
        with pytest.raises(MalformedHeaderError):
            fields_from_bytes(buf[:4] + b"\x07" + buf[5:])

    def test_short_header(self, buf):
        with pytest.raises(MalformedHeaderError):
            fields_from_bytes(buf[:20])

    def test_zero_grid(self, buf):
        with pytest.raises(MalformedHeaderError):
            fields_from_bytes(buf[:12] + struct.pack("<I", 0) + buf[16:])

    def test_truncated(self, buf):
        with pytest.raises(TruncatedPayloadError):
            fields_from_bytes(buf[:-4])

    def test_trailing_bytes(self, buf):
        with pytest.raises(DimensionMismatchError):
            fields_from_bytes(buf + b"\0\0\0\0")

    def test_channel_mismatch(self, buf):
        with pytest.raises(DimensionMismatchError):
            fields_from_bytes(buf[:24] + struct.pack("<I", 4) + buf[28:])

    def test_skeleton_mismatch(self, buf, skeleton):
        bad = buf[:20] + struct.pack("<I", 16) + buf[24:]
        with pytest.raises(DimensionMismatchError):
            fields_from_bytes(bad, skeleton)

    def test_distinct_error_classes(self):
        classes = {MalformedHeaderError, DimensionMismatchError, TruncatedPayloadError}
        assert len(classes) == 3
        assert all(issubclass(c, FieldFormatError) for c in classes)

    def test_geometry_mismatch_on_write(self, skeleton):
        pif, _ = new_fields(FieldGeometry(8, 4, 3), skeleton)
        _, paf = new_fields(FieldGeometry(8, 5, 3), skeleton)
        with pytest.raises(DimensionMismatchError):
            fields_to_bytes(pif, paf)
