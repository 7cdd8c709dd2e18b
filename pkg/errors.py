"""
残差累积管线 - 异常定义
所有模块共用的异常层次，main.py 据此映射退出码
"""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 2  # 参数错误
EXIT_INPUT = 3  # 输入 / 解析错误
EXIT_INTERNAL = 4  # 内部不变量被破坏


class ResaccError(Exception):
    """管线异常基类"""

    exit_code = EXIT_INTERNAL


class ConfigError(ResaccError):
    """配置或命令行参数无效"""

    exit_code = EXIT_USAGE


class InputError(ResaccError):
    """输入文件缺失或不可读"""

    exit_code = EXIT_INPUT


class IngestError(InputError):
    """帧序列读入失败，frame_index 指出出错的帧"""

    def __init__(self, message: str, frame_index: Optional[int] = None):
        self.frame_index = frame_index
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)


class FormatError(InputError, ValueError):
    """数据格式错误（PGM 头、zigzag 长度、CSV、模型文件等）"""


class BitstreamError(FormatError):
    """CRV 码流解析错误，附带字节偏移 / 帧号 / 宏块号"""

    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        frame_index: Optional[int] = None,
        mb_index: Optional[int] = None,
    ):
        self.offset = offset
        self.frame_index = frame_index
        self.mb_index = mb_index
        where = []
        if frame_index is not None:
            where.append(f"frame {frame_index}")
        if mb_index is not None:
            where.append(f"macroblock {mb_index}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DimensionError(InputError, ValueError):
    """平面尺寸不一致"""


class InvariantError(ResaccError):
    """内部逻辑错误"""

    exit_code = EXIT_INTERNAL
