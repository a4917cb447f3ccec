import numpy as np
import pytest

from compsearch.blobio import BlobFormatError
from compsearch.encoder import (
    EncoderError,
    EncoderWeights,
    batchnorm,
    bypass_forward,
    conv2d,
    encoder_forward,
    init_weights,
    load_weights,
    maxpool2,
    save_weights,
)


def conv2d_bruteforce(x, kernels, bias):
    """Six-nested-loop reference convolution (zero padding 1, stride 1)."""
    out_ch, in_ch, _, _ = kernels.shape
    _, h, w = x.shape
    out = np.zeros((out_ch, h, w), dtype=np.float64)
    for o in range(out_ch):
        for r in range(h):
            for c in range(w):
                acc = 0.0
                for i in range(in_ch):
                    for dr in range(3):
                        for dc in range(3):
                            rr, cc = r + dr - 1, c + dc - 1
                            if 0 <= rr < h and 0 <= cc < w:
                                acc += float(x[i, rr, cc]) * float(kernels[o, i, dr, dc])
                out[o, r, c] = acc + float(bias[o])
    return out


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 9, 9)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        k[0, 0, 1, 1] = 1.0
        out = conv2d(x, k, np.zeros(1, dtype=np.float32))
        assert np.allclose(out, x, atol=1e-7)

    def test_zero_input_broadcasts_bias(self):
        x = np.zeros((2, 5, 5), dtype=np.float32)
        k = np.ones((3, 2, 3, 3), dtype=np.float32)
        bias = np.array([1.0, -2.0, 0.5], dtype=np.float32)
        out = conv2d(x, k, bias)
        assert np.allclose(out, bias[:, None, None])

    def test_against_bruteforce(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((8, 31, 31)).astype(np.float32)
        k = rng.standard_normal((4, 8, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        fast = conv2d(x, k, b)
        slow = conv2d_bruteforce(x, k, b)
        assert np.abs(fast - slow).max() <= 1e-5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EncoderError, match="incompatible"):
            conv2d(
                np.zeros((2, 4, 4), dtype=np.float32),
                np.zeros((1, 3, 3, 3), dtype=np.float32),
                np.zeros(1, dtype=np.float32),
            )


class TestPoolAndNorm:
    def test_maxpool2_drops_odd_edge(self):
        x = np.arange(25, dtype=np.float32).reshape(1, 5, 5)
        out = maxpool2(x)
        assert out.shape == (1, 2, 2)
        assert (out[0] == np.array([[6, 8], [16, 18]])).all()

    def test_batchnorm_identity_stats(self):
        from compsearch.encoder import BatchNorm

        x = np.random.default_rng(0).standard_normal((3, 4, 4)).astype(np.float32)
        bn = BatchNorm(
            scale=np.ones(3, dtype=np.float32),
            shift=np.zeros(3, dtype=np.float32),
            running_mean=np.zeros(3, dtype=np.float32),
            running_var=np.ones(3, dtype=np.float32),
        )
        out = batchnorm(x, bn)
        assert np.allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-6)


class TestEncoderForward:
    def test_shape_pipeline_default_architecture(self):
        weights = init_weights(seed=0, in_channels=256)
        shapes = []
        x = np.random.default_rng(1).standard_normal((256, 31, 31)).astype(np.float32) * 0.05
        for idx, (conv, bn) in enumerate(weights.layers):
            x = conv2d(x, conv.kernels, conv.bias)
            shapes.append(x.shape)
            x = batchnorm(x, bn)
            x = np.maximum(x, 0)
            if idx < 2:
                x = maxpool2(x)
                shapes.append(x.shape)
        assert shapes == [
            (384, 31, 31),
            (384, 15, 15),
            (512, 15, 15),
            (512, 7, 7),
            (832, 7, 7),
        ]
        emb = encoder_forward(
            np.random.default_rng(2).standard_normal((256, 31, 31)).astype(np.float32) * 0.05,
            weights,
        )
        assert emb.shape == (832 * 7 * 7,)
        assert emb.shape == (40768,)
        assert abs(np.linalg.norm(emb.astype(np.float64)) - 1.0) < 1e-6

    def test_deterministic(self):
        weights = init_weights(seed=3, in_channels=4, channels=(6, 8, 10))
        x = np.random.default_rng(5).standard_normal((4, 31, 31)).astype(np.float32)
        a = encoder_forward(x, weights)
        b = encoder_forward(x, weights)
        assert (a == b).all()

    def test_zero_tensor_is_rejected(self):
        x = np.zeros((4, 31, 31), dtype=np.float32)
        with pytest.raises(EncoderError, match="zero embedding"):
            bypass_forward(x)
        # conv path with zero bias and identity BN also yields all zeros
        weights = init_weights(seed=3, in_channels=4, channels=(6, 8, 10))
        with pytest.raises(EncoderError, match="zero embedding"):
            encoder_forward(x, weights)

    def test_non_finite_rejected(self):
        weights = init_weights(seed=3, in_channels=4, channels=(6, 8, 10))
        x = np.zeros((4, 31, 31), dtype=np.float32)
        x[0, 0, 0] = np.nan
        with pytest.raises(EncoderError, match="non-finite"):
            encoder_forward(x, weights)

    def test_channel_mismatch_rejected(self):
        weights = init_weights(seed=3, in_channels=4, channels=(6, 8, 10))
        with pytest.raises(EncoderError, match="incompatible"):
            encoder_forward(np.zeros((5, 31, 31), dtype=np.float32), weights)

    def test_bypass_length_and_norm(self):
        x = np.random.default_rng(0).standard_normal((16, 31, 31)).astype(np.float32)
        emb = bypass_forward(x)
        assert emb.shape == (16 * 49,)
        assert abs(np.linalg.norm(emb.astype(np.float64)) - 1.0) < 1e-6


class TestInitWeights:
    def test_same_seed_bit_identical(self):
        a = init_weights(seed=9, in_channels=8, channels=(8, 8, 8))
        b = init_weights(seed=9, in_channels=8, channels=(8, 8, 8))
        for (ca, _), (cb, _) in zip(a.layers, b.layers):
            assert (ca.kernels == cb.kernels).all()

    def test_seeds_differ(self):
        a = init_weights(seed=1, in_channels=8, channels=(8, 8, 8))
        b = init_weights(seed=2, in_channels=8, channels=(8, 8, 8))
        assert not (a.layers[0][0].kernels == b.layers[0][0].kernels).all()

    def test_forward_stays_finite_over_100_seeds(self):
        rng = np.random.default_rng(0)
        for seed in range(100):
            weights = init_weights(seed=seed, in_channels=8, channels=(8, 8, 8))
            x = rng.standard_normal((8, 31, 31)).astype(np.float32)
            tensor = x
            for idx, (conv, bn) in enumerate(weights.layers):
                tensor = conv2d(tensor, conv.kernels, conv.bias)
                tensor = batchnorm(tensor, bn)
                tensor = np.maximum(tensor, 0)
                if idx < 2:
                    tensor = maxpool2(tensor)
            norm = float(np.linalg.norm(tensor.ravel().astype(np.float64)))
            assert np.isfinite(norm)
            assert 1e-6 < norm < 1e6


class TestWeightsIO:
    def test_round_trip_bit_exact(self, tmp_path):
        weights = init_weights(seed=4, in_channels=6, channels=(7, 9, 11))
        path = tmp_path / "weights.csetw"
        save_weights(weights, path)
        loaded = load_weights(path)
        assert loaded.in_channels == 6
        for (ca, ba), (cb, bb) in zip(weights.layers, loaded.layers):
            assert (ca.kernels == cb.kernels).all()
            assert (ca.bias == cb.bias).all()
            assert (ba.scale == bb.scale).all()
            assert (ba.running_var == bb.running_var).all()

    def test_truncated_file(self, tmp_path):
        weights = init_weights(seed=4, in_channels=2, channels=(2, 2, 2))
        path = tmp_path / "weights.csetw"
        save_weights(weights, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(BlobFormatError):
            load_weights(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "weights.csetw"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(BlobFormatError, match="bad magic"):
            load_weights(path)

    def test_newer_version_rejected(self, tmp_path):
        weights = init_weights(seed=4, in_channels=2, channels=(2, 2, 2))
        path = tmp_path / "weights.csetw"
        save_weights(weights, path)
        data = bytearray(path.read_bytes())
        data[:8] = b"CSETW002"
        # keep the trailing CRC consistent so only the version differs
        import zlib
        import struct

        data[-4:] = struct.pack("<I", zlib.crc32(bytes(data[:-4])))
        path.write_bytes(bytes(data))
        with pytest.raises(BlobFormatError, match="unsupported version"):
            load_weights(path)

    def test_corrupted_byte_fails_crc(self, tmp_path):
        weights = init_weights(seed=4, in_channels=2, channels=(2, 2, 2))
        path = tmp_path / "weights.csetw"
        save_weights(weights, path)
        data = bytearray(path.read_bytes())
        data[40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(BlobFormatError, match="CRC"):
            load_weights(path)
