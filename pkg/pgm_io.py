"""
PGM (P5) 读写和原子写文件
"""

import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from errors import FormatError, InputError

PathLike = Union[str, "os.PathLike[str]"]


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """先写 <name>.tmp，成功后改名；失败时删除临时文件"""
    final = Path(path)
    tmp = final.with_name(final.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, final)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


class StagedFiles:
    """同一批输出文件：先各自写成 <name>.tmp，整批成功后再统一改名"""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self.pending: List[Tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        final = self.directory / name
        tmp = final.with_name(final.name + ".tmp")
        self.pending.append((tmp, final))
        return tmp

    def commit(self) -> List[Path]:
        for tmp, final in self.pending:
            os.replace(tmp, final)
        return [final for _, final in self.pending]

    def discard(self) -> None:
        for tmp, _ in self.pending:
            if tmp.exists():
                tmp.unlink()


@contextmanager
def staged_files(directory: PathLike) -> Iterator[StagedFiles]:
    staged = StagedFiles(directory)
    try:
        yield staged
    except BaseException:
        staged.discard()
        raise
    staged.commit()


def _read_header_tokens(data: bytes, count: int):
    """读取 PGM 头部的前 count 个记号，跳过 # 注释；返回记号和像素起始偏移"""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("PGM 头部不完整")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # 头部与像素之间恰好一个空白字符
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("PGM 头部之后缺少分隔符")
    return tokens, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """解析内存中的 P5 数据"""
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"不支持的 PGM 格式: {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("PGM 头部数值无效") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"PGM 尺寸无效: {width}x{height}")
    if maxval != 255:
        raise FormatError(f"只支持 maxval 255: {maxval}")
    size = width * height
    if len(data) - offset < size:
        raise FormatError("PGM 像素数据被截断")
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=offset)
    return raster.reshape(height, width).copy()


def read_pgm(path: PathLike) -> np.ndarray:
    """读取 8 位灰度 PGM，返回 (H, W) uint8 数组"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"无法读取 {path}: {e}") from e
    return decode_pgm(data)


def encode_pgm(plane: np.ndarray) -> bytes:
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise FormatError(f"PGM 只能保存二维平面，得到 shape={plane.shape}")
    height, width = plane.shape
    header = b"P5\n%d %d\n255\n" % (width, height)
    return header + np.ascontiguousarray(plane, dtype=np.uint8).tobytes()


def write_pgm(path: PathLike, plane: np.ndarray) -> None:
    """原子写入 P5 文件"""
    payload = encode_pgm(plane)
    with atomic_path(path) as tmp:
        tmp.write_bytes(payload)


def residual_to_pgm_plane(values: np.ndarray) -> np.ndarray:
    """残差 [-255, 255] 仿射映射到 [0, 255]，便于目视检查"""
    v = np.clip(np.asarray(values, dtype=np.int32), -255, 255)
    return ((v + 255) * 255 // 510).astype(np.uint8)
