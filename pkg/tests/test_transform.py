"""
测试变换核心（DCT / IDCT、量化、zigzag）
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import FormatError
from transform import (
    ZIGZAG_ORDER,
    QuantizedBlock,
    blocks_from_plane,
    dct8x8,
    dequantize,
    idct8x8,
    inverse_zigzag,
    plane_from_blocks,
    quantize,
    quantize_levels,
    reconstruct_residual_blocks,
    zigzag,
)


def naive_dct(blocks):
    """直接按定义求和的 DCT-II：out[u, v] = a(u) a(v) ΣxΣy b[x, y] cos(..u..) cos(..v..)"""
    alpha = np.array([math.sqrt(1 / 8)] + [math.sqrt(2 / 8)] * 7)
    idx = np.arange(8)
    # cos_table[u, x] = cos((2x+1)uπ/16)
    cos_table = np.cos((2 * idx[None, :] + 1) * idx[:, None] * np.pi / 16)
    total = np.einsum("ux,vy,nxy->nuv", cos_table, cos_table, np.asarray(blocks, dtype=np.float64))
    return alpha[:, None] * alpha[None, :] * total


@pytest.mark.unit
class TestDct:
    """测试 8x8 DCT"""

    def test_zero_block(self):
        """全零块变换后仍为全零"""
        assert np.array_equal(dct8x8(np.zeros((8, 8))), np.zeros((8, 8)))

    def test_constant_block_dc(self):
        """常数 16 的块 DC = 128，其余为 0"""
        coeffs = dct8x8(np.full((8, 8), 16.0))
        assert coeffs[0, 0] == pytest.approx(128.0)
        ac = coeffs.copy()
        ac[0, 0] = 0
        assert np.max(np.abs(ac)) < 1e-12

    def test_matches_naive_oracle(self, rng):
        """1000 个随机块与直接求和的定义一致"""
        blocks = rng.uniform(-255, 255, size=(1000, 8, 8))
        assert np.max(np.abs(dct8x8(blocks) - naive_dct(blocks))) < 1e-9

    def test_round_trip_1000_blocks(self, rng):
        """1000 个随机块 idct(dct(x)) 误差 < 1e-9"""
        blocks = rng.uniform(-255, 255, size=(1000, 8, 8))
        assert np.max(np.abs(idct8x8(dct8x8(blocks)) - blocks)) < 1e-9

    def test_parseval(self, rng):
        """正交变换保持能量"""
        blocks = rng.uniform(-255, 255, size=(200, 8, 8))
        coeffs = dct8x8(blocks)
        e_in = (blocks**2).sum(axis=(1, 2))
        e_out = (coeffs**2).sum(axis=(1, 2))
        assert np.allclose(e_in, e_out, rtol=1e-6, atol=0)

    def test_wrong_shape(self):
        """形状不对时报格式错误"""
        with pytest.raises(FormatError):
            dct8x8(np.zeros((4, 4)))


@pytest.mark.unit
class TestIdct:
    """测试 8x8 IDCT"""

    def test_zero_block(self):
        assert np.array_equal(idct8x8(np.zeros((8, 8))), np.zeros((8, 8)))

    def test_dc_only(self):
        """DC=128 还原为常数 16"""
        coeffs = np.zeros((8, 8))
        coeffs[0, 0] = 128.0
        assert np.allclose(idct8x8(coeffs), 16.0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-255, 255), min_size=64, max_size=64))
    def test_round_trip_property(self, values):
        """任意 [-255, 255] 输入都能往返"""
        block = np.array(values).reshape(8, 8)
        assert np.max(np.abs(idct8x8(dct8x8(block)) - block)) < 1e-9


@pytest.mark.unit
class TestQuantize:
    """测试量化和反量化"""

    @pytest.mark.parametrize(
        "coefficient,qscale,expected",
        [
            (40.0, 8, 5),
            (-12.0, 8, -2),  # -1.5 远离零舍入
            (12.0, 8, 2),
            (3.9, 8, 0),
            (-4.0, 8, -1),  # -0.5 远离零舍入
            (7.0, 1, 7),
        ],
    )
    def test_single_coefficient(self, coefficient, qscale, expected):
        block = np.zeros((8, 8))
        block[2, 3] = coefficient
        q = quantize(block, qscale)
        assert q.values[2, 3] == expected
        assert q.qscale == qscale

    def test_qscale_one_identity(self, rng):
        """qscale 1 时整数系数不变"""
        block = rng.integers(-300, 300, size=(8, 8)).astype(np.float64)
        assert np.array_equal(quantize(block, 1).values, block.astype(np.int16))

    def test_saturates_to_int16(self):
        """超出 16 位范围时饱和"""
        block = np.full((8, 8), 1e9)
        block[0, 0] = -1e9
        q = quantize(block, 1)
        assert q.values[0, 0] == -32768
        assert q.values[1, 1] == 32767

    def test_dequantize(self):
        values = np.zeros((8, 8), dtype=np.int16)
        values[0, 0] = 5
        coeffs = dequantize(QuantizedBlock(values, 8))
        assert coeffs[0, 0] == 40.0
        assert np.count_nonzero(coeffs) == 1

    def test_dequantize_zero(self):
        assert not np.any(dequantize(QuantizedBlock(np.zeros((8, 8), dtype=np.int16), 3)))

    def test_invalid_qscale(self):
        with pytest.raises(ValueError):
            QuantizedBlock(np.zeros((8, 8), dtype=np.int16), 0)
        with pytest.raises(ValueError):
            quantize_levels(np.zeros((8, 8)), 0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-5000, 5000), min_size=64, max_size=64),
        st.integers(1, 64),
    )
    def test_error_bound(self, values, qscale):
        """|Q^-1(Q(c)) - c| <= qscale / 2"""
        block = np.array(values).reshape(8, 8)
        err = np.abs(dequantize(quantize(block, qscale)) - block)
        assert np.max(err) <= qscale / 2 + 1e-9


@pytest.mark.unit
class TestZigzag:
    """测试 zigzag 扫描"""

    def test_first_six_positions(self):
        assert ZIGZAG_ORDER[:6] == ((0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2))

    def test_last_position(self):
        assert ZIGZAG_ORDER[-1] == (7, 7)

    def test_is_permutation(self):
        """64 个位置恰好各出现一次"""
        assert len(ZIGZAG_ORDER) == 64
        assert sorted(ZIGZAG_ORDER) == [(r, c) for r in range(8) for c in range(8)]

    def test_dc_only(self):
        block = np.zeros((8, 8), dtype=np.int16)
        block[0, 0] = 9
        seq = zigzag(block)
        assert seq[0] == 9
        assert np.count_nonzero(seq) == 1

    def test_inverse(self, rng):
        blocks = rng.integers(-100, 100, size=(10, 8, 8))
        assert np.array_equal(inverse_zigzag(zigzag(blocks)), blocks)

    def test_scan_order_values(self):
        """按 0..63 编号的块扫描后顺序与 ZIGZAG_ORDER 一致"""
        block = np.arange(64).reshape(8, 8)
        assert zigzag(block).tolist() == [r * 8 + c for r, c in ZIGZAG_ORDER]

    @pytest.mark.parametrize("length", [0, 63, 65])
    def test_wrong_length(self, length):
        with pytest.raises(FormatError):
            inverse_zigzag(np.zeros(length))


@pytest.mark.unit
class TestPlaneBlocks:
    """测试平面与宏块 / 8x8 块之间的切分"""

    def test_round_trip(self, rng):
        plane = rng.integers(-255, 255, size=(48, 64))
        blocks = blocks_from_plane(plane)
        assert blocks.shape == (12, 4, 8, 8)
        assert np.array_equal(plane_from_blocks(blocks, 48, 64), plane)

    def test_quadrant_order(self):
        """宏块内 4 个块按光栅顺序：左上、右上、左下、右下"""
        plane = np.zeros((16, 32), dtype=np.int32)
        plane[0:8, 8:16] = 1  # 第 0 个宏块右上
        plane[8:16, 16:24] = 2  # 第 1 个宏块左下
        blocks = blocks_from_plane(plane)
        assert np.all(blocks[0, 1] == 1)
        assert np.all(blocks[1, 2] == 2)
        assert blocks[0, 0].sum() == 0

    def test_reconstruct_dc_block(self):
        """qscale 1，DC=128 的块重建为常数 16"""
        levels = np.zeros((1, 4, 8, 8))
        levels[0, 2, 0, 0] = 128
        out = reconstruct_residual_blocks(levels, 1)
        assert np.all(out[0, 2] == 16)
        assert not np.any(out[0, :2])
        assert out.dtype == np.int16
