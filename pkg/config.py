"""
残差累积管线 - 配置
默认参数常量和带校验的配置数据类
"""

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional

from errors import ConfigError

# 默认参数
DEFAULT_WINDOW_SIZE = 10  # 时间窗口大小 WS
DEFAULT_SIM_C = 1.0  # 相似度稳定常数 c
DEFAULT_QSCALE = 8
DEFAULT_GOP_SIZE = 250  # 桌面规模的样例保持单 GOP
DEFAULT_SEARCH_RANGE = 7
DEFAULT_PARTITIONS = 8  # 时间分段数
DEFAULT_K = 3

MAX_SEARCH_RANGE = 15
MAX_U16 = 0xFFFF
THREADS_ENV = "RESACC_THREADS"

_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


@dataclass(frozen=True)
class EncoderConfig:
    """编码器参数"""

    qscale: int = DEFAULT_QSCALE
    gop_size: int = DEFAULT_GOP_SIZE  # I 帧周期
    search_range: int = DEFAULT_SEARCH_RANGE  # 运动搜索半径（像素）

    def validate(self) -> "EncoderConfig":
        if not 1 <= self.qscale <= MAX_U16:
            raise ConfigError(f"qscale 必须在 [1, {MAX_U16}] 内: {self.qscale}")
        if not 1 <= self.gop_size <= MAX_U16:
            raise ConfigError(f"gop_size 必须在 [1, {MAX_U16}] 内: {self.gop_size}")
        if not 0 <= self.search_range <= MAX_SEARCH_RANGE:
            raise ConfigError(
                f"search_range 必须在 [0, {MAX_SEARCH_RANGE}] 内: {self.search_range}"
            )
        return self


@dataclass(frozen=True)
class AccumulatorConfig:
    """动态累积参数"""

    window_size: int = DEFAULT_WINDOW_SIZE
    c: float = DEFAULT_SIM_C
    cut_on_iframe: bool = True

    def validate(self) -> "AccumulatorConfig":
        if self.window_size < 1:
            raise ConfigError(f"window_size 必须 >= 1: {self.window_size}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise ConfigError(f"c 必须为正的有限数: {self.c}")
        return self


@dataclass
class PipelineConfig:
    """整条管线的参数集合"""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    accumulator: AccumulatorConfig = field(default_factory=AccumulatorConfig)
    partitions: int = DEFAULT_PARTITIONS
    k: int = DEFAULT_K
    seed: Optional[int] = None
    out_dir: Optional[str] = None
    trace: bool = False
    threads: int = 0  # 0 = 自动

    def validate(self) -> "PipelineConfig":
        self.encoder.validate()
        self.accumulator.validate()
        if self.partitions < 1:
            raise ConfigError(f"partitions 必须 >= 1: {self.partitions}")
        if self.k < 1:
            raise ConfigError(f"k 必须 >= 1: {self.k}")
        if self.threads < 0:
            raise ConfigError(f"threads 不能为负: {self.threads}")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed 必须是 u64: {self.seed}")
        return self


def resolve_threads(
    requested: Optional[int] = None, environ: Optional[Mapping[str, str]] = None
) -> int:
    """确定并行线程数：显式参数优先，其次环境变量 RESACC_THREADS，0 表示自动"""
    if environ is None:
        environ = os.environ
    value = requested
    if not value:
        raw = environ.get(THREADS_ENV, "").strip()
        if raw:
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} 不是整数: {raw!r}") from None
            if value < 0:
                raise ConfigError(f"{THREADS_ENV} 不能为负: {value}")
    if not value:
        value = os.cpu_count() or 1
    return value


def parse_bool(text: str) -> bool:
    """解析 --cut-on-iframe=<bool> 之类的布尔参数"""
    word = str(text).strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ConfigError(f"无法识别的布尔值: {text!r}")
