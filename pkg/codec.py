"""
编码端 - 读入亮度帧、整像素全搜索运动估计、残差形成、DCT 量化、CRV 码流序列化

CRV 码流（小端）:
    头部: "CRV1", u16 width, u16 height, u16 gop_size, u16 qscale,
          u16 search_range, u32 frame_count
    每帧: u8 frame_type (0=I, 1=P)，随后按光栅顺序排列的宏块
    每宏块: i8 dx, i8 dy，随后 4 个系数块
    每块: zigzag 顺序的 (u8 zero_run, i16 level) 对，以 (255, 0) 结束
"""

import glob
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import EncoderConfig
from errors import DimensionError, FormatError, IngestError, InputError, InvariantError
from pgm_io import read_pgm
from transform import (
    QuantizedBlock,
    blocks_from_plane,
    dct8x8,
    inverse_zigzag,
    plane_from_blocks,
    quantize_levels,
    reconstruct_residual_blocks,
    zigzag,
)

logger = logging.getLogger(__name__)

MAGIC = b"CRV1"
HEADER_STRUCT = struct.Struct("<4sHHHHHI")
HEADER_SIZE = HEADER_STRUCT.size  # 18
MB_SIZE = 16
BLOCKS_PER_MB = 4
COEFFS = 64
SENTINEL = (255, 0)
# (u8 zero_run, i16 level)，紧凑排列，每对 3 字节
PAIR_DTYPE = np.dtype([("run", "u1"), ("level", "<i2")])


class FrameKind(Enum):
    """帧类型"""

    I = 0  # noqa: E741  帧内
    P = 1  # 前向预测


@dataclass(frozen=True, eq=False)
class Frame:
    """单通道 8 位亮度帧 M_i"""

    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"帧尺寸无效: {self.width}x{self.height}")
        if self.width % MB_SIZE or self.height % MB_SIZE:
            raise DimensionError(
                f"帧尺寸必须是 16 的倍数: {self.width}x{self.height}"
            )
        if np.shape(self.pixels) != (self.height, self.width):
            raise DimensionError(
                f"像素数 {np.size(self.pixels)} 与 {self.width}x{self.height} 不符"
            )
        pixels = np.array(self.pixels, dtype=np.uint8)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, plane: np.ndarray) -> "Frame":
        plane = np.asarray(plane)
        if plane.ndim != 2:
            raise DimensionError(f"帧必须是二维平面，得到 shape={plane.shape}")
        return cls(plane.shape[1], plane.shape[0], plane)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class MotionVector:
    """宏块运动矢量，整像素；predicted[y, x] = ref[y + dy, x + dx]"""

    dx: int
    dy: int


@dataclass(frozen=True)
class MacroBlockRecord:
    """16x16 宏块：一个运动矢量 + 4 个量化的 8x8 块（光栅顺序）"""

    mv: MotionVector
    blocks: Tuple[QuantizedBlock, QuantizedBlock, QuantizedBlock, QuantizedBlock]


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    gop_size: int
    qscale: int
    search_range: int
    frame_count: int

    @property
    def mb_rows(self) -> int:
        return self.height // MB_SIZE

    @property
    def mb_cols(self) -> int:
        return self.width // MB_SIZE

    @property
    def mb_count(self) -> int:
        return self.mb_rows * self.mb_cols

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            MAGIC,
            self.width,
            self.height,
            self.gop_size,
            self.qscale,
            self.search_range,
            self.frame_count,
        )


@dataclass(frozen=True, eq=False)
class FrameRecord:
    """一帧的码流记录"""

    kind: FrameKind
    motion_vectors: np.ndarray  # (mb_rows, mb_cols, 2) int8，顺序 (dx, dy)
    levels: np.ndarray  # (mb_count, 4, 64) int16，zigzag 顺序

    def macroblocks(self, qscale: int) -> List[MacroBlockRecord]:
        """展开成逐宏块的记录"""
        mvs = self.motion_vectors.reshape(-1, 2)
        blocks = inverse_zigzag(self.levels)
        records = []
        for m in range(blocks.shape[0]):
            quads = tuple(QuantizedBlock(blocks[m, b], qscale) for b in range(BLOCKS_PER_MB))
            records.append(MacroBlockRecord(MotionVector(int(mvs[m, 0]), int(mvs[m, 1])), quads))
        return records

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.levels))

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.motion_vectors, other.motion_vectors)
            and np.array_equal(self.levels, other.levels)
        )


@dataclass(eq=False)
class CrvStream:
    """内存中的完整码流：头部 + 帧记录"""

    header: StreamHeader
    frames: List[FrameRecord] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, CrvStream):
            return NotImplemented
        return self.header == other.header and len(self.frames) == len(other.frames) and all(
            a == b for a, b in zip(self.frames, other.frames)
        )


# ---------------------------------------------------------------- 读入


def _check_plane(plane: np.ndarray, index: int, shape: Optional[Tuple[int, int]]):
    h, w = plane.shape
    if w % MB_SIZE or h % MB_SIZE:
        raise IngestError(f"尺寸 {w}x{h} 不是 16 的倍数", index)
    if shape is not None and plane.shape != shape:
        raise IngestError(
            f"尺寸 {w}x{h} 与第 0 帧 {shape[1]}x{shape[0]} 不一致", index
        )


def _read_raw_planes(descriptor: str) -> List[np.ndarray]:
    """raw:<path>:<W>x<H>，文件内是连续的 8 位亮度平面"""
    try:
        _, rest = descriptor.split(":", 1)
        path, size = rest.rsplit(":", 1)
        width, height = (int(v) for v in size.lower().split("x"))
    except ValueError:
        raise IngestError(f"无法解析原始流描述: {descriptor!r}") from None
    if width <= 0 or height <= 0:
        raise IngestError(f"原始流尺寸无效: {width}x{height}")
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IngestError(f"无法读取 {path}: {e}") from e
    plane_size = width * height
    count, tail = divmod(len(data), plane_size)
    if tail:
        raise IngestError(f"原始流末尾有不完整的帧（多出 {tail} 字节）", count)
    buf = np.frombuffer(data, dtype=np.uint8)
    return [buf[i * plane_size : (i + 1) * plane_size].reshape(height, width) for i in range(count)]


def ingest_frames(source: Union[str, Sequence[str]]) -> List[Frame]:
    """读入帧序列：PGM 通配模式、PGM 路径列表或 raw:<path>:<W>x<H>"""
    if isinstance(source, str) and source.startswith("raw:"):
        planes = _read_raw_planes(source)
        if not planes:
            raise IngestError("no frames: 原始流为空")
    else:
        paths = sorted(glob.glob(source)) if isinstance(source, str) else [str(p) for p in source]
        if not paths:
            raise IngestError(f"no frames: {source!r} 没有匹配到任何文件")
        planes = []
        for i, path in enumerate(paths):
            try:
                planes.append(read_pgm(path))
            except (FormatError, InputError) as e:
                raise IngestError(f"{path}: {e}", i) from e
    if not planes:
        raise IngestError("no frames")

    shape = None
    frames = []
    for i, plane in enumerate(planes):
        _check_plane(plane, i, shape)
        shape = plane.shape
        frames.append(Frame.from_array(plane))
    logger.info("读入 %d 帧, %dx%d", len(frames), shape[1], shape[0])
    return frames


# ---------------------------------------------------------------- 运动估计


def _plane(frame) -> np.ndarray:
    return frame.pixels if isinstance(frame, Frame) else np.asarray(frame)


def _candidates(search_range: int) -> List[Tuple[int, int]]:
    """候选矢量按 (|dx|+|dy|, 光栅顺序) 排列，严格小于才替换，从而实现平局规则"""
    cands = [
        (dx, dy)
        for dy in range(-search_range, search_range + 1)
        for dx in range(-search_range, search_range + 1)
    ]
    cands.sort(key=lambda v: (abs(v[0]) + abs(v[1]), v[1], v[0]))
    return cands


def _search(cur: np.ndarray, ref: np.ndarray, search_range: int):
    h, w = cur.shape
    rows, cols = h // MB_SIZE, w // MB_SIZE
    cur32 = cur.astype(np.int32)
    pad = search_range
    padded = np.pad(ref.astype(np.int32), pad, mode="edge")
    ys = np.arange(rows) * MB_SIZE
    xs = np.arange(cols) * MB_SIZE

    best_sad = np.full((rows, cols), np.iinfo(np.int64).max, dtype=np.int64)
    field_ = np.zeros((rows, cols, 2), dtype=np.int16)
    for dx, dy in _candidates(search_range):
        # 参考块必须完全在帧内
        row_ok = (ys + dy >= 0) & (ys + dy + MB_SIZE <= h)
        col_ok = (xs + dx >= 0) & (xs + dx + MB_SIZE <= w)
        valid = row_ok[:, None] & col_ok[None, :]
        if not valid.any():
            continue
        shifted = padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]
        sad = np.abs(cur32 - shifted).reshape(rows, MB_SIZE, cols, MB_SIZE).sum(axis=(1, 3))
        better = valid & (sad < best_sad)
        best_sad[better] = sad[better]
        field_[better] = (dx, dy)
    return field_, best_sad


def full_search_me(cur, ref, search_range: int) -> np.ndarray:
    """全搜索块匹配，返回 (mb_rows, mb_cols, 2) 的 (dx, dy) 矢量场

    每个宏块取 SAD 最小的矢量；平局取 |dx|+|dy| 最小者，再按候选的光栅顺序。
    所有宏块在一次候选循环中向量化求解，结果与逐块顺序计算一致。
    """
    cur_p, ref_p = _plane(cur), _plane(ref)
    if cur_p.shape != ref_p.shape:
        raise DimensionError(f"当前帧 {cur_p.shape} 与参考帧 {ref_p.shape} 尺寸不同")
    field_, _ = _search(cur_p, ref_p, search_range)
    return field_


def motion_compensate(ref, motion_field: np.ndarray) -> np.ndarray:
    """按矢量场从参考帧取预测块，组成预测帧 M^P"""
    ref_p = _plane(ref)
    h, w = ref_p.shape
    predicted = np.empty_like(ref_p)
    rows, cols = h // MB_SIZE, w // MB_SIZE
    for r in range(rows):
        y = r * MB_SIZE
        for c in range(cols):
            x = c * MB_SIZE
            dx, dy = int(motion_field[r, c, 0]), int(motion_field[r, c, 1])
            predicted[y : y + MB_SIZE, x : x + MB_SIZE] = ref_p[
                y + dy : y + dy + MB_SIZE, x + dx : x + dx + MB_SIZE
            ]
    return predicted


def compute_residual(cur, predicted) -> np.ndarray:
    """R_i = M_i - M_i^P，逐像素有符号差，范围 [-255, 255]"""
    cur_p, pred_p = _plane(cur), _plane(predicted)
    if cur_p.shape != pred_p.shape:
        raise DimensionError(f"当前帧 {cur_p.shape} 与预测帧 {pred_p.shape} 尺寸不同")
    return cur_p.astype(np.int16) - pred_p.astype(np.int16)


# ---------------------------------------------------------------- 游程编码


def rle_encode(seq) -> List[Tuple[int, int]]:
    """单块 zigzag 序列 -> (zero_run, level) 对，末尾带哨兵 (255, 0)"""
    seq = np.asarray(seq)
    if seq.shape != (COEFFS,):
        raise FormatError(f"游程编码需要 64 个系数，得到 shape={seq.shape}")
    pairs = []
    run = 0
    for v in seq.tolist():
        if v == 0:
            run += 1
        else:
            pairs.append((run, int(v)))
            run = 0
    pairs.append(SENTINEL)
    return pairs


def rle_decode(pairs: Iterable[Tuple[int, int]]) -> np.ndarray:
    """rle_encode 的逆过程；越界或缺少哨兵时报错"""
    out = np.zeros(COEFFS, dtype=np.int16)
    pos = 0
    for run, level in pairs:
        if (run, level) == SENTINEL:
            return out
        pos += run
        if pos >= COEFFS:
            raise FormatError("RLE overrun: 游程超出 64 个系数")
        out[pos] = level
        pos += 1
    raise FormatError("缺少块结束哨兵 (255, 0)")


def _pack_frame(record: FrameRecord) -> bytes:
    """一帧记录的字节表示，所有块的游程对一次性向量化生成"""
    levels = record.levels.reshape(-1, COEFFS)
    n_blocks = levels.shape[0]
    block_idx, pos = np.nonzero(levels)
    values = levels[block_idx, pos]

    first_in_block = np.ones(len(pos), dtype=bool)
    first_in_block[1:] = block_idx[1:] != block_idx[:-1]
    prev_pos = np.where(first_in_block, -1, np.roll(pos, 1))
    runs = pos - prev_pos - 1

    ends = np.cumsum(np.bincount(block_idx, minlength=n_blocks))
    pairs = np.zeros(len(pos) + n_blocks, dtype=PAIR_DTYPE)
    # 每个前面的块都贡献了一个哨兵
    slots = np.arange(len(pos)) + block_idx
    pairs["run"][slots] = runs
    pairs["level"][slots] = values
    sentinel_slots = ends + np.arange(n_blocks)
    pairs["run"][sentinel_slots] = SENTINEL[0]
    raw = pairs.tobytes()

    block_start = np.concatenate(([0], sentinel_slots[:-1] + 1)) * PAIR_DTYPE.itemsize
    mb_start = block_start[::BLOCKS_PER_MB].tolist() + [len(raw)]
    mvs = record.motion_vectors.reshape(-1, 2).astype(np.int8)

    out = bytearray([record.kind.value])
    for m in range(mvs.shape[0]):
        out += mvs[m].tobytes()
        out += raw[mb_start[m] : mb_start[m + 1]]
    return bytes(out)


def serialize_stream(stream: CrvStream) -> bytes:
    """CrvStream -> 字节；partial_decoder.parse_stream 是它的逆"""
    if stream.header.frame_count != len(stream.frames):
        raise InvariantError(
            f"头部帧数 {stream.header.frame_count} 与记录数 {len(stream.frames)} 不一致"
        )
    parts = [stream.header.pack()]
    for record in stream.frames:
        if record.levels.shape[0] != stream.header.mb_count:
            raise InvariantError("帧记录的宏块数与头部尺寸不一致")
        parts.append(_pack_frame(record))
    return b"".join(parts)


# ---------------------------------------------------------------- 编码器


class CrvEncoder:
    """逐帧编码器，P 帧以重建的前一帧为参考（与解码端一致）"""

    def __init__(self, width: int, height: int, config: EncoderConfig, keep_residuals: bool = False):
        self.config = config.validate()
        self.width = width
        self.height = height
        self.keep_residuals = keep_residuals
        self.residuals: List[np.ndarray] = []
        self._recon: Optional[np.ndarray] = None
        self._index = 0

    def frame_kind(self, index: int) -> FrameKind:
        return FrameKind.I if index % self.config.gop_size == 0 else FrameKind.P

    def encode_frame(self, frame: Frame) -> FrameRecord:
        cur = _plane(frame)
        if cur.shape != (self.height, self.width):
            raise DimensionError(
                f"第 {self._index} 帧尺寸 {cur.shape[1]}x{cur.shape[0]} 与码流 "
                f"{self.width}x{self.height} 不一致"
            )
        kind = self.frame_kind(self._index)
        rows, cols = self.height // MB_SIZE, self.width // MB_SIZE
        if kind is FrameKind.I:
            # 帧内：对全零预测求残差，与 P 帧共用变换路径
            motion_field = np.zeros((rows, cols, 2), dtype=np.int16)
            predicted = np.zeros_like(cur)
        else:
            motion_field = full_search_me(cur, self._recon, self.config.search_range)
            predicted = motion_compensate(self._recon, motion_field)

        residual = compute_residual(cur, predicted)
        levels = quantize_levels(dct8x8(blocks_from_plane(residual)), self.config.qscale)
        decoded = plane_from_blocks(
            reconstruct_residual_blocks(levels, self.config.qscale), self.height, self.width
        )
        self._recon = np.clip(predicted.astype(np.int32) + decoded, 0, 255).astype(np.uint8)
        if self.keep_residuals:
            self.residuals.append(residual)

        record = FrameRecord(kind, motion_field.astype(np.int8), zigzag(levels).astype(np.int16))
        logger.debug(
            "编码第 %d 帧 (%s), 非零系数 %d", self._index, kind.name, record.nonzero_count
        )
        self._index += 1
        return record


def _prepare_frames(frames) -> List[Frame]:
    frames = [f if isinstance(f, Frame) else Frame.from_array(f) for f in frames]
    if not frames:
        raise IngestError("no frames")
    first = frames[0]
    for i, f in enumerate(frames):
        if (f.width, f.height) != (first.width, first.height):
            raise IngestError(
                f"尺寸 {f.width}x{f.height} 与第 0 帧 {first.width}x{first.height} 不一致", i
            )
    return frames


def encode_with_residuals(frames, config: EncoderConfig) -> Tuple[bytes, List[np.ndarray]]:
    """编码并返回编码端保留的残差（用于核对部分解码结果）"""
    frames = _prepare_frames(frames)
    config.validate()
    first = frames[0]
    encoder = CrvEncoder(first.width, first.height, config, keep_residuals=True)
    header = StreamHeader(
        first.width, first.height, config.gop_size, config.qscale, config.search_range, len(frames)
    )
    stream = CrvStream(header, [encoder.encode_frame(f) for f in frames])
    data = serialize_stream(stream)
    logger.info(
        "编码完成: %d 帧, %d 字节, qscale=%d, gop=%d",
        len(frames),
        len(data),
        config.qscale,
        config.gop_size,
    )
    return data, encoder.residuals


def encode(frames, config: EncoderConfig) -> bytes:
    """帧序列 -> CRV 码流字节"""
    data, _ = encode_with_residuals(frames, config)
    return data
