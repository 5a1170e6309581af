import struct
import warnings

import numpy as np
import pytest

from lowlight.errors import ConfigError, FormatError, InputError, ShapeError
from lowlight.io import (decode_tensor, encode_tensor, load_archive, load_raw, load_tensor, read_image,
                         save_archive, save_raw, save_tensor, write_image)
from lowlight.noise import ExposureSetting
from lowlight.rawproc import RawFrame, flip, pack_bayer, preprocess, random_patch, unpack_bayer

BLACK, WHITE = 512.0, 16383.0


class TestRawFrame:
    def test_validation(self):
        with pytest.raises(ShapeError):
            RawFrame(np.zeros((3, 4)))
        with pytest.raises(InputError):
            RawFrame(np.zeros((4, 4)), cfa="BGGR")
        with pytest.raises(InputError):
            RawFrame(np.full((4, 4), 20000.0))
        with pytest.raises(InputError):
            RawFrame(np.zeros((4, 4)), black_level=100, white_level=100)

    def test_meta_round_trip(self):
        frame = RawFrame(np.zeros((4, 4)), iso=3200, exposure_s=0.04)
        again = RawFrame.from_meta(frame.bayer, frame.meta())
        assert again.meta() == frame.meta()


class TestPreprocess:
    def test_black_frame(self):
        for ratio in (1.0, 100.0, 300.0):
            out = preprocess(RawFrame(np.full((4, 6), BLACK)), ExposureSetting(ratio)).data
            np.testing.assert_array_equal(out, 0.0)

    def test_full_scale(self):
        out = preprocess(RawFrame(np.full((4, 4), WHITE)), ExposureSetting(1.0)).data
        np.testing.assert_array_equal(out, 1.0)

    def test_index_map_oracle(self):
        bayer = BLACK + 10.0 * np.arange(16, dtype=np.float64).reshape(4, 4)
        out = preprocess(RawFrame(bayer, BLACK, WHITE), ExposureSetting(100.0)).data
        assert out.shape == (2, 2, 4)
        channel_of = {(0, 0): 0, (0, 1): 1, (1, 0): 2, (1, 1): 3}  # R, G1, G2, B
        for y in range(4):
            for x in range(4):
                expected = min(max((bayer[y, x] - BLACK) / (WHITE - BLACK), 0.0) * 100.0, 1.0)
                assert out[y // 2, x // 2, channel_of[(y % 2, x % 2)]] == pytest.approx(expected, rel=1e-15)

    def test_below_black_clamps_to_zero(self):
        out = preprocess(RawFrame(np.full((2, 2), 100.0)), ExposureSetting(1.0)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_monotone(self, rng):
        a = rng.uniform(0, WHITE, size=(8, 8))
        b = np.minimum(a + rng.uniform(0, 50, size=a.shape), WHITE)
        e = ExposureSetting(2.0)
        assert (preprocess(RawFrame(b), e).data >= preprocess(RawFrame(a), e).data).all()


class TestPacking:
    def test_bijection(self, rng):
        bayer = rng.standard_normal((6, 8))
        np.testing.assert_array_equal(unpack_bayer(pack_bayer(bayer)), bayer)
        packed = rng.standard_normal((3, 4, 4))
        np.testing.assert_array_equal(pack_bayer(unpack_bayer(packed)), packed)

    def test_sites_unique(self):
        ids = pack_bayer(np.arange(64).reshape(8, 8))
        assert len(np.unique(ids)) == 64

    def test_odd_rejected(self):
        with pytest.raises(ShapeError):
            pack_bayer(np.zeros((3, 4)))


class TestRandomPatch:
    def test_full_extent_no_flip_is_identity(self, rng):
        inp, tgt = rng.standard_normal((8, 8, 4)), rng.standard_normal((16, 16, 3))
        a, b = random_patch(inp, tgt, 8, seed=3, flips=False)
        np.testing.assert_array_equal(a, inp)
        np.testing.assert_array_equal(b, tgt)

    def test_double_flip_restores(self, rng):
        x = rng.standard_normal((5, 6, 2))
        np.testing.assert_array_equal(flip(flip(x, True, True), True, True), x)
        np.testing.assert_array_equal(flip(flip(x, horizontal=True), horizontal=True), x)

    def test_marker_alignment(self):
        inp = np.zeros((16, 16, 4))
        tgt = np.zeros((32, 32, 3))
        y0, x0 = 9, 5
        inp[y0, x0] = 1.0
        tgt[2 * y0:2 * y0 + 2, 2 * x0:2 * x0 + 2] = 1.0
        survived = 0
        for seed in range(100):
            a, b = random_patch(inp, tgt, 8, seed)
            hits = np.argwhere(a[..., 0] == 1.0)
            assert (len(hits) == 1) == bool(b.any())
            if len(hits):
                survived += 1
                y, x = hits[0]
                np.testing.assert_array_equal(b[2 * y:2 * y + 2, 2 * x:2 * x + 2], 1.0)
                assert b.sum() == 12.0
        assert survived > 0

    def test_deterministic(self, rng):
        inp, tgt = rng.standard_normal((16, 16, 4)), rng.standard_normal((32, 32, 3))
        a1, b1 = random_patch(inp, tgt, 8, seed=42)
        a2, b2 = random_patch(inp, tgt, 8, seed=42)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(b1, b2)

    def test_bad_sizes(self, rng):
        inp, tgt = rng.standard_normal((8, 8, 4)), rng.standard_normal((16, 16, 3))
        with pytest.raises(ConfigError):
            random_patch(inp, tgt, 10, 0)
        with pytest.raises(ConfigError):
            random_patch(inp, tgt, 7, 0)


class TestImages:
    @pytest.mark.parametrize("bits", [8, 16])
    @pytest.mark.parametrize("shape", [(5, 7, 3), (5, 7), (1, 1, 3), (1, 1)])
    def test_round_trip(self, tmp_path, rng, bits, shape):
        peak = (1 << bits) - 1
        img = rng.integers(0, peak + 1, size=shape) / peak
        write_image(tmp_path / "x.png", img, bits=bits)
        np.testing.assert_array_equal(read_image(tmp_path / "x.png"), img)

    def test_clamping_counted(self, tmp_path):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            n = write_image(tmp_path / "x.png", np.array([[-0.5, 0.5, 1.5]]))
        assert n == 2 and caught
        back = read_image(tmp_path / "x.png")
        assert back[0, 0] == 0.0 and back[0, 2] == 1.0

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not a png")
        with pytest.raises(FormatError):
            read_image(tmp_path / "bad.png")
        with pytest.raises(FormatError):
            read_image(tmp_path / "missing.png")


class TestContainers:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_slt_round_trip(self, tmp_path, rng, dtype):
        x = rng.standard_normal((3, 1, 5)).astype(dtype)
        save_tensor(tmp_path / "t.slt", x)
        y = load_tensor(tmp_path / "t.slt")
        assert y.dtype == dtype and y.shape == x.shape
        np.testing.assert_array_equal(x, y)

    def test_slt_layout(self):
        blob = encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
        assert blob[:4] == b"SLT1"
        assert struct.unpack_from("<I2Q", blob, 4) == (2, 1, 2)
        assert blob[24] == 0
        assert np.frombuffer(blob[25:], "<f4").tolist() == [1.0, 2.0]

    def test_slt_scalar(self):
        assert decode_tensor(encode_tensor(np.float64(3.5))).shape == ()

    def test_slt_errors(self):
        with pytest.raises(FormatError):
            decode_tensor(b"XXXX\x00\x00\x00\x00\x01")
        with pytest.raises(FormatError):
            decode_tensor(encode_tensor(np.ones(4))[:-3])

    def test_archive_deterministic(self, tmp_path, rng):
        tensors = {"b.w": rng.standard_normal(3), "a.w": rng.standard_normal((2, 2))}
        save_archive(tmp_path / "1.ckpt", tensors, {"kind": "x"})
        save_archive(tmp_path / "2.ckpt", dict(reversed(list(tensors.items()))), {"kind": "x"})
        assert (tmp_path / "1.ckpt").read_bytes() == (tmp_path / "2.ckpt").read_bytes()
        loaded, meta = load_archive(tmp_path / "1.ckpt")
        assert meta == {"kind": "x"} and set(loaded) == set(tensors)

    def test_raw_round_trip(self, tmp_path, rng):
        bayer = rng.integers(0, 16384, size=(4, 6)).astype(np.float64)
        save_raw(tmp_path / "f.raw", bayer, {"black_level": 512, "white_level": 16383, "cfa": "RGGB",
                                             "iso": 800, "exposure_s": 0.1})
        data, meta = load_raw(tmp_path / "f.raw")
        np.testing.assert_array_equal(data, bayer)
        assert (meta["height"], meta["width"], meta["iso"]) == (4, 6, 800)
        assert len((tmp_path / "f.raw").read_bytes()) == 4 * 6 * 2

    def test_raw_size_mismatch(self, tmp_path):
        save_raw(tmp_path / "f.raw", np.zeros((2, 2)), {})
        (tmp_path / "f.raw").write_bytes(b"\x00" * 6)
        with pytest.raises(FormatError):
            load_raw(tmp_path / "f.raw")
