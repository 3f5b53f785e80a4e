import sys

import numpy as np
import pytest

from rgbdstream import codec
from rgbdstream.codec import CodecConfig
from rgbdstream.external_codec import ExternalCodec
from rgbdstream.frames import FrameKind

ARGV = [sys.executable, "-m", "rgbdstream.external_codec"]


@pytest.fixture(scope="module")
def ext():
    c = ExternalCodec(ARGV)
    yield c
    c.close()


def _plane(shape, seed):
    return np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)


class TestExternalCodec:
    def test_i_frame_matches_builtin(self, ext):
        plane = _plane((64, 64, 3), 0)
        cfg = CodecConfig()
        enc = ext.encode(FrameKind.I, plane, None, cfg)
        ref = codec.encode_i(plane, cfg)
        assert enc.to_bytes() == ref.to_bytes()

    def test_i_roundtrip(self, ext):
        plane = _plane((64, 64), 1)
        cfg = CodecConfig(quant=1)
        enc = ext.encode(FrameKind.I, plane, None, cfg)
        out, mask = ext.decode(enc, None)
        assert (out == plane).all()
        assert not mask.any

    def test_p_roundtrip_with_zero_fill(self, ext):
        cfg = CodecConfig()
        ref = _plane((64, 64), 2)
        cur = np.roll(ref, 4, axis=1)
        enc = ext.encode(FrameKind.P, cur, ref, cfg)
        builtin = codec.encode_p(cur, ref, cfg)
        assert enc.to_bytes() == builtin.to_bytes()
        n = len(enc.payload)
        zeroed = codec.EncodedFrame(0, 0, enc.kind, enc.modality, enc.header,
                                    b"\x00" * n)
        got_plane, got_mask = ext.decode(zeroed, ref, [(0, n)])
        exp_plane, exp_mask = codec.decode(zeroed, ref, [(0, n)])
        assert (got_plane == exp_plane).all()
        assert (got_mask.grid == exp_mask.grid).all()

    def test_sequential_requests_reuse_process(self, ext):
        cfg = CodecConfig()
        for seed in range(3):
            plane = _plane((32, 32), 10 + seed)
            enc = ext.encode(FrameKind.I, plane, None, cfg)
            out, _ = ext.decode(enc, None)
            assert out.shape == plane.shape
