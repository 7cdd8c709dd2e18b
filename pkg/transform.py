"""
变换核心 - 8x8 DCT / IDCT、均匀量化、zigzag 扫描
所有函数都是纯函数，既接受单个 8x8 块，也接受 (..., 8, 8) 批量
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import fft

from errors import FormatError

BLOCK = 8
INT16_MIN = -32768
INT16_MAX = 32767

# DCT(R) 的系数块，正交归一化的 8x8 实数数组
CoeffBlock = np.ndarray


def _build_zigzag() -> List[Tuple[int, int]]:
    """按对角线生成标准 zigzag 扫描顺序 (row, col)"""
    order = []
    for s in range(2 * BLOCK - 1):
        rows = range(max(0, s - BLOCK + 1), min(s, BLOCK - 1) + 1)
        # 偶数对角线自下而上，奇数对角线自上而下
        if s % 2 == 0:
            rows = reversed(rows)
        for r in rows:
            order.append((r, s - r))
    return order


ZIGZAG_ORDER: Tuple[Tuple[int, int], ...] = tuple(_build_zigzag())
_ZIGZAG_FLAT = np.array([r * BLOCK + c for r, c in ZIGZAG_ORDER], dtype=np.intp)
_ZIGZAG_INVERSE = np.argsort(_ZIGZAG_FLAT)


@dataclass(frozen=True, eq=False)
class QuantizedBlock:
    """量化后的系数块 R_q"""

    values: np.ndarray  # 8x8 int16
    qscale: int

    def __post_init__(self):
        if self.qscale < 1:
            raise ValueError(f"qscale 必须 >= 1: {self.qscale}")
        if np.shape(self.values) != (BLOCK, BLOCK):
            raise FormatError(f"量化块必须是 8x8，得到 {np.shape(self.values)}")

    def __eq__(self, other):
        if not isinstance(other, QuantizedBlock):
            return NotImplemented
        return self.qscale == other.qscale and np.array_equal(self.values, other.values)


def _as_blocks(block) -> np.ndarray:
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-2:] != (BLOCK, BLOCK):
        raise FormatError(f"需要 (..., 8, 8) 的块，得到 shape={arr.shape}")
    return arr


def dct8x8(block) -> CoeffBlock:
    """二维正交 DCT-II（可分离），保持能量"""
    return fft.dctn(_as_blocks(block), type=2, norm="ortho", axes=(-2, -1))


def idct8x8(block) -> np.ndarray:
    """dct8x8 的逆变换"""
    return fft.idctn(_as_blocks(block), type=2, norm="ortho", axes=(-2, -1))


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_levels(coeffs, qscale: int) -> np.ndarray:
    """批量量化：round-half-away-from-zero(c / qscale)，饱和到 int16"""
    if qscale < 1:
        raise ValueError(f"qscale 必须 >= 1: {qscale}")
    levels = round_half_away(np.asarray(coeffs, dtype=np.float64) / qscale)
    return np.clip(levels, INT16_MIN, INT16_MAX).astype(np.int16)


def dequantize_levels(levels, qscale: int) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * qscale


def quantize(block: CoeffBlock, qscale: int) -> QuantizedBlock:
    """Q(·)：单个系数块量化"""
    return QuantizedBlock(quantize_levels(_as_blocks(block), qscale), int(qscale))


def dequantize(block: QuantizedBlock) -> CoeffBlock:
    """Q^-1(·)：量化值乘以 qscale"""
    return dequantize_levels(block.values, block.qscale)


def reconstruct_residual_blocks(levels, qscale: int) -> np.ndarray:
    """R~ = IDCT(Q^-1(R_q))，四舍五入后饱和到 int16

    编码端重建与解码端共用这一个函数，保证两边结果一致。
    """
    spatial = idct8x8(dequantize_levels(levels, qscale))
    return np.clip(round_half_away(spatial), INT16_MIN, INT16_MAX).astype(np.int16)


def zigzag(block) -> np.ndarray:
    """8x8 块 -> 64 元 zigzag 序列（支持批量）"""
    arr = np.asarray(block)
    if arr.ndim < 2 or arr.shape[-2:] != (BLOCK, BLOCK):
        raise FormatError(f"zigzag 需要 8x8 块，得到 shape={arr.shape}")
    flat = arr.reshape(arr.shape[:-2] + (BLOCK * BLOCK,))
    return flat[..., _ZIGZAG_FLAT]


def inverse_zigzag(seq) -> np.ndarray:
    """64 元 zigzag 序列 -> 8x8 块（支持批量）"""
    arr = np.asarray(seq)
    if arr.ndim < 1 or arr.shape[-1] != BLOCK * BLOCK:
        raise FormatError(f"zigzag 序列长度必须是 64，得到 shape={arr.shape}")
    return arr[..., _ZIGZAG_INVERSE].reshape(arr.shape[:-1] + (BLOCK, BLOCK))


def blocks_from_plane(plane: np.ndarray) -> np.ndarray:
    """(H, W) 平面按宏块光栅顺序切成 (n_mb, 4, 8, 8)，宏块内 4 个 8x8 也按光栅顺序"""
    h, w = plane.shape
    mb = plane.reshape(h // 16, 2, BLOCK, w // 16, 2, BLOCK)
    # (mb_row, mb_col, sub_row, sub_col, y, x)
    mb = mb.transpose(0, 3, 1, 4, 2, 5)
    return mb.reshape(-1, 4, BLOCK, BLOCK)


def plane_from_blocks(blocks: np.ndarray, height: int, width: int) -> np.ndarray:
    """blocks_from_plane 的逆操作"""
    mb = blocks.reshape(height // 16, width // 16, 2, 2, BLOCK, BLOCK)
    return mb.transpose(0, 2, 4, 1, 3, 5).reshape(height, width)
