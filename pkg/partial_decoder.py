"""
部分解码 - 解析 CRV 码流，只做反量化 + IDCT 恢复残差
不做运动补偿，也不重建任何参考帧
"""

import logging
import struct
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from codec import (
    BLOCKS_PER_MB,
    COEFFS,
    HEADER_SIZE,
    HEADER_STRUCT,
    MAGIC,
    MB_SIZE,
    CrvStream,
    FrameKind,
    FrameRecord,
    StreamHeader,
    rle_decode,
)
from errors import BitstreamError, FormatError
from pgm_io import residual_to_pgm_plane, write_pgm
from transform import inverse_zigzag, plane_from_blocks, reconstruct_residual_blocks

logger = logging.getLogger(__name__)

_MV = struct.Struct("<bb")
_PAIR = struct.Struct("<Bh")
_KIND = struct.Struct("<B")


def _block_pairs(data: bytes, cursor: List[int]) -> Iterator[Tuple[int, int]]:
    """从 cursor[0] 起逐个读游程对；rle_decode 读到哨兵即停，cursor 停在块尾"""
    while True:
        pair = _PAIR.unpack_from(data, cursor[0])
        cursor[0] += _PAIR.size
        yield pair


@dataclass(frozen=True, eq=False)
class ResidualFrame:
    """一帧的残差 R~_i（有符号 16 位）"""

    width: int
    height: int
    values: np.ndarray  # (height, width) int16，只读
    frame_index: int
    kind: FrameKind
    motion_vectors: Optional[np.ndarray] = None  # 解析出来但不参与计算

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int16)
        if values.shape != (self.height, self.width):
            raise BitstreamError(
                f"残差平面 {values.shape} 与 {self.width}x{self.height} 不符",
                frame_index=self.frame_index,
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def energy(self) -> int:
        v = self.values.astype(np.int64)
        return int((v * v).sum())


def parse_header(data: bytes) -> StreamHeader:
    """解析并校验 18 字节的流头部"""
    if len(data) >= 4 and bytes(data[:4]) != MAGIC:
        raise BitstreamError(f"bad magic {bytes(data[:4])!r}", offset=0)
    if len(data) < HEADER_SIZE:
        raise BitstreamError("unexpected end in header", offset=len(data))
    magic, width, height, gop, qscale, search_range, count = HEADER_STRUCT.unpack_from(data, 0)
    if width == 0 or height == 0 or width % MB_SIZE or height % MB_SIZE:
        raise BitstreamError(f"invalid dimensions {width}x{height}", offset=4)
    if gop == 0:
        raise BitstreamError("gop_size 为 0", offset=8)
    if qscale == 0:
        raise BitstreamError("qscale 为 0", offset=10)
    return StreamHeader(width, height, gop, qscale, search_range, count)


def read_frame_record(
    data: bytes, offset: int, header: StreamHeader, frame_index: int
) -> Tuple[FrameRecord, int]:
    """从 offset 处读一帧记录，返回 (记录, 下一帧偏移)"""
    mb_count = header.mb_count
    mvs = np.zeros((mb_count, 2), dtype=np.int8)
    levels = np.zeros((mb_count, BLOCKS_PER_MB, COEFFS), dtype=np.int16)
    pos = offset
    mb = None
    try:
        (kind_byte,) = _KIND.unpack_from(data, pos)
        pos += 1
        try:
            kind = FrameKind(kind_byte)
        except ValueError:
            raise BitstreamError(
                f"unknown frame type {kind_byte}", offset=offset, frame_index=frame_index
            ) from None
        for mb in range(mb_count):
            mvs[mb] = _MV.unpack_from(data, pos)
            cursor = [pos + 2]
            for b in range(BLOCKS_PER_MB):
                try:
                    levels[mb, b] = rle_decode(_block_pairs(data, cursor))
                except FormatError as e:
                    raise BitstreamError(
                        str(e),
                        offset=cursor[0] - _PAIR.size,
                        frame_index=frame_index,
                        mb_index=mb,
                    ) from None
            pos = cursor[0]
    except struct.error:
        raise BitstreamError(
            "unexpected end of stream", offset=len(data), frame_index=frame_index, mb_index=mb
        ) from None

    motion_vectors = mvs.reshape(header.mb_rows, header.mb_cols, 2)
    return FrameRecord(kind, motion_vectors, levels), pos


def decode_residual_frame(record: FrameRecord, qscale: int, header: Optional[StreamHeader] = None,
                          frame_index: int = 0) -> ResidualFrame:
    """R~ = IDCT(Q^-1(R_q))，逐块取整并拼回整幅平面；运动矢量原样保留"""
    rows, cols = record.motion_vectors.shape[:2]
    height, width = rows * MB_SIZE, cols * MB_SIZE
    if header is not None and (width, height) != (header.width, header.height):
        raise BitstreamError("帧记录尺寸与头部不符", frame_index=frame_index)
    blocks = reconstruct_residual_blocks(inverse_zigzag(record.levels), qscale)
    values = plane_from_blocks(blocks, height, width)
    return ResidualFrame(width, height, values, frame_index, record.kind, record.motion_vectors)


def residual_stream(data: bytes) -> Iterator[ResidualFrame]:
    """逐帧惰性产出残差；中途损坏时先产出之前的所有帧再报错"""
    header = parse_header(data)
    logger.info(
        "残差流: %dx%d, %d 帧, qscale=%d", header.width, header.height, header.frame_count, header.qscale
    )
    offset = HEADER_SIZE
    for i in range(header.frame_count):
        try:
            record, offset = read_frame_record(data, offset, header, i)
        except BitstreamError as e:
            logger.error("第 %d 帧解析失败，已产出 %d 帧: %s", i, i, e)
            raise
        yield decode_residual_frame(record, header.qscale, header, i)


def scan_frame_offsets(data: bytes) -> List[int]:
    """单次前向扫描，得到每帧的起始字节偏移"""
    header = parse_header(data)
    offsets = []
    offset = HEADER_SIZE
    for i in range(header.frame_count):
        offsets.append(offset)
        _, offset = read_frame_record(data, offset, header, i)
    return offsets


def decode_frame_at(data: bytes, offsets: List[int], index: int) -> ResidualFrame:
    """借助偏移表直接解码第 index 帧，只读该帧自己的字节"""
    header = parse_header(data)
    if not 0 <= index < len(offsets):
        raise IndexError(f"帧号越界: {index}（共 {len(offsets)} 帧）")
    record, _ = read_frame_record(data, offsets[index], header, index)
    return decode_residual_frame(record, header.qscale, header, index)


def parse_stream(data: bytes) -> CrvStream:
    """完整解析为 CrvStream，codec.serialize_stream 的逆"""
    header = parse_header(data)
    frames = []
    offset = HEADER_SIZE
    for i in range(header.frame_count):
        record, offset = read_frame_record(data, offset, header, i)
        frames.append(record)
    if offset != len(data):
        logger.warning("码流末尾有 %d 字节多余数据", len(data) - offset)
    return CrvStream(header, frames)


def export_residual_pgm(frame: ResidualFrame, path) -> None:
    """残差按 [-255, 255] -> [0, 255] 映射后存为 PGM"""
    write_pgm(path, residual_to_pgm_plane(frame.values))
