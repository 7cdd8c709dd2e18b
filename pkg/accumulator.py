"""
动态累积 - 残差相似度与带时间窗口的动态累积
把残差流压缩成更短的累积残差流
"""

import csv
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional

import numpy as np

from codec import FrameKind
from config import AccumulatorConfig
from errors import DimensionError, FormatError, InvariantError, ResaccError
from partial_decoder import ResidualFrame
from pgm_io import atomic_path

logger = logging.getLogger(__name__)

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# 轨迹中的决策
WARMUP = "warmup"
ACCUMULATE = "accumulate"
CUT = "cut"
IFRAME = "iframe"
FLUSH = "flush"
MEMBER_DECISIONS = (WARMUP, ACCUMULATE, CUT)

TRACE_FIELDS = ["frame_index", "kind", "similarity", "window_mean", "decision", "group_id"]


def _values(frame) -> np.ndarray:
    return frame.values if isinstance(frame, ResidualFrame) else np.asarray(frame)


def similarity(prev, cur, c: float = 1.0) -> float:
    """相似度 (2·Σ|a||b| + c) / (Σa² + Σb² + c)，取值 (0, 1]

    乘积和平方在整幅平面上用精确整数求和，|prev| == |cur| 时结果恰为 1.0。
    """
    a = np.abs(_values(prev).astype(np.int64))
    b = np.abs(_values(cur).astype(np.int64))
    if a.shape != b.shape:
        raise DimensionError(f"残差尺寸不同: {a.shape} vs {b.shape}")
    if not c > 0:
        raise ValueError(f"c 必须为正: {c}")
    cross = 2 * int((a * b).sum())
    energy = int((a * a).sum()) + int((b * b).sum())
    return (cross + c) / (energy + c)


class SimilarityWindow:
    """最近 N 个相似度值；均值用精确有理数累加，不随滑动漂移"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"窗口大小必须 >= 1: {capacity}")
        self.capacity = capacity
        self._entries: deque = deque()
        self._total = Fraction(0)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.capacity

    @property
    def entries(self) -> List[float]:
        return list(self._entries)

    @property
    def mean(self) -> Optional[float]:
        """正确舍入的算术平均；空窗口返回 None"""
        if not self._entries:
            return None
        return float(self._total / len(self._entries))

    def append(self, value: float) -> None:
        """追加一个值；已满时先移出最旧的"""
        if self.full:
            self._total -= Fraction(self._entries.popleft())
        self._entries.append(value)
        self._total += Fraction(value)

    def clear(self) -> None:
        self._entries.clear()
        self._total = Fraction(0)


@dataclass(frozen=True, eq=False)
class AccumulatedResidual:
    """一组连续残差的逐像素和"""

    width: int
    height: int
    sums: np.ndarray  # (height, width) int32
    first_index: int
    last_index: int
    member_count: int
    group_id: int = 0

    def __post_init__(self):
        if self.member_count != self.last_index - self.first_index + 1:
            raise InvariantError(
                f"组 {self.group_id}: member_count={self.member_count} 与跨度 "
                f"[{self.first_index}, {self.last_index}] 不符"
            )

    @property
    def span(self) -> int:
        return self.member_count


@dataclass(frozen=True)
class TraceRow:
    """决策轨迹的一行

    accumulate / cut 行的 window_mean 是参与比较的窗口均值；
    warmup 行是追加之后的窗口均值；iframe 行没有 group_id。
    """

    frame_index: int
    kind: str
    similarity: Optional[float]
    window_mean: Optional[float]
    decision: str
    group_id: Optional[int]


@dataclass
class ReductionReport:
    input_frames: int
    emitted_groups: int
    reduction_ratio: float
    span_histogram: Dict[int, int] = field(default_factory=dict)


class _Group:
    def __init__(self, frame: ResidualFrame, group_id: int):
        self.group_id = group_id
        self.width = frame.width
        self.height = frame.height
        self.sums = frame.values.astype(np.int64)
        self.first_index = frame.frame_index
        self.last_index = frame.frame_index
        self.last_kind = frame.kind.name
        self.count = 1

    def add(self, frame: ResidualFrame) -> None:
        if frame.values.shape != self.sums.shape:
            raise DimensionError(f"第 {frame.frame_index} 帧尺寸与本组不一致")
        self.sums += frame.values
        self.last_index = frame.frame_index
        self.last_kind = frame.kind.name
        self.count += 1

    def finish(self) -> AccumulatedResidual:
        if self.sums.size and (self.sums.min() < INT32_MIN or self.sums.max() > INT32_MAX):
            raise InvariantError(f"组 {self.group_id} 的累加和超出 int32")
        return AccumulatedResidual(
            self.width,
            self.height,
            self.sums.astype(np.int32),
            self.first_index,
            self.last_index,
            self.count,
            self.group_id,
        )


class DynamicAccumulator:
    """动态累积的流式状态机

    1. 预热：计算相邻残差的相似度直到窗口装满 N 个值，期间的帧都属于当前组
    2. 之后每来一帧，计算它与上一帧的相似度 s
    3. s >= 窗口均值：并入当前组，窗口滑动
    4. s < 窗口均值：输出当前组，以当前帧开新组，清空窗口回到预热
    5. 流结束时输出最后一组
    cut_on_iframe 时 I 帧强制切分且不进入任何组。
    """

    def __init__(self, config: AccumulatorConfig, record_trace: bool = False):
        self.config = config.validate()
        self.window = SimilarityWindow(config.window_size)
        self.record_trace = record_trace
        self.trace: List[TraceRow] = []
        self.input_frames = 0
        self.emitted = 0
        self.iframe_cuts = 0
        self._group: Optional[_Group] = None
        self._prev: Optional[ResidualFrame] = None
        self._next_group_id = 0
        self._last_index: Optional[int] = None

    def _row(self, frame, s, mean, decision, group_id):
        if self.record_trace:
            self.trace.append(TraceRow(frame.frame_index, frame.kind.name, s, mean, decision, group_id))

    def _start(self, frame: ResidualFrame) -> None:
        self._group = _Group(frame, self._next_group_id)
        self._next_group_id += 1

    def _emit(self) -> Optional[AccumulatedResidual]:
        if self._group is None:
            return None
        done = self._group.finish()
        self._group = None
        self.emitted += 1
        logger.debug(
            "输出第 %d 组: 帧 %d..%d (%d 帧)",
            done.group_id,
            done.first_index,
            done.last_index,
            done.member_count,
        )
        return done

    def push(self, frame: ResidualFrame) -> Optional[AccumulatedResidual]:
        """送入一帧残差，若因此结束了一组则返回该组"""
        if self._last_index is not None and frame.frame_index <= self._last_index:
            raise InvariantError(
                f"帧号必须严格递增: {frame.frame_index} 在 {self._last_index} 之后"
            )
        self._last_index = frame.frame_index

        if frame.kind is FrameKind.I and self.config.cut_on_iframe:
            done = self._emit()
            self._prev = None
            self.window.clear()
            self.iframe_cuts += 1
            self._row(frame, None, None, IFRAME, None)
            return done

        self.input_frames += 1
        if self._group is None:
            self._start(frame)
            self._prev = frame
            self._row(frame, None, None, WARMUP, self._group.group_id)
            return None

        s = similarity(self._prev, frame, self.config.c)
        self._prev = frame
        if not self.window.full:
            self.window.append(s)
            self._group.add(frame)
            self._row(frame, s, self.window.mean, WARMUP, self._group.group_id)
            return None

        mean = self.window.mean
        if s >= mean:
            self.window.append(s)
            self._group.add(frame)
            self._row(frame, s, mean, ACCUMULATE, self._group.group_id)
            return None

        done = self._emit()
        self._start(frame)
        self.window.clear()
        self._row(frame, s, mean, CUT, self._group.group_id)
        return done

    def flush(self) -> Optional[AccumulatedResidual]:
        """流结束：输出最后一组（若非空）"""
        group = self._group
        done = self._emit()
        if done is not None and self.record_trace:
            self.trace.append(TraceRow(done.last_index, group.last_kind, None, None, FLUSH, done.group_id))
        self._prev = None
        self.window.clear()
        return done


def run_dynamic_accumulation(
    stream: Iterable[ResidualFrame],
    config: AccumulatorConfig,
    accumulator: Optional[DynamicAccumulator] = None,
) -> Iterator[AccumulatedResidual]:
    """对残差流做动态累积，惰性产出累积残差

    上游出错时，已完成的组都已产出，尚未切分的组被丢弃。
    传入 accumulator 可在结束后读取它的 trace 和计数。
    """
    acc = accumulator if accumulator is not None else DynamicAccumulator(config)
    try:
        for frame in stream:
            done = acc.push(frame)
            if done is not None:
                yield done
    except ResaccError:
        if acc._group is not None:
            logger.warning("上游出错，丢弃未完成的组（起始帧 %d）", acc._group.first_index)
        raise
    done = acc.flush()
    if done is not None:
        yield done
    if acc.iframe_cuts > 1:
        logger.warning("%d 个 I 帧强制切分了累积组", acc.iframe_cuts)
    logger.info("动态累积: %d 帧 -> %d 组", acc.input_frames, acc.emitted)


def single_frame_groups(
    stream: Iterable[ResidualFrame], cut_on_iframe: bool = True
) -> Iterator[AccumulatedResidual]:
    """不累积的基线：每帧残差单独成组"""
    group_id = 0
    for frame in stream:
        if frame.kind is FrameKind.I and cut_on_iframe:
            continue
        yield AccumulatedResidual(
            frame.width,
            frame.height,
            frame.values.astype(np.int32),
            frame.frame_index,
            frame.frame_index,
            1,
            group_id,
        )
        group_id += 1


def normalize_accumulated(acc: AccumulatedResidual) -> np.ndarray:
    """[min, max] 仿射映射到 [0, 255]（向下取整）；常数平面输出 128"""
    sums = np.asarray(acc.sums, dtype=np.int64)
    lo, hi = int(sums.min()), int(sums.max())
    if lo == hi:
        return np.full(sums.shape, 128, dtype=np.uint8)
    return ((sums - lo) * 255 // (hi - lo)).astype(np.uint8)


def reduction_stats(
    input_frame_count: int, emitted_group_count: int, spans: Optional[Iterable[int]] = None
) -> ReductionReport:
    """帧数削减比例 1 - emitted / input（input 为 0 时记 0），附组跨度直方图"""
    if input_frame_count < 0 or emitted_group_count < 0:
        raise InvariantError(f"计数不能为负: {input_frame_count}, {emitted_group_count}")
    if emitted_group_count > input_frame_count:
        raise InvariantError(
            f"输出组数 {emitted_group_count} 大于输入帧数 {input_frame_count}"
        )
    ratio = 0.0 if input_frame_count == 0 else 1.0 - emitted_group_count / input_frame_count
    histogram = dict(sorted(Counter(spans).items())) if spans is not None else {}
    return ReductionReport(input_frame_count, emitted_group_count, ratio, histogram)


def reduction_stats_from_trace(rows: Iterable[TraceRow]) -> ReductionReport:
    """从决策轨迹重新统计（与在线统计应当一致）"""
    members = Counter()
    count = 0
    for row in rows:
        if row.decision in MEMBER_DECISIONS:
            count += 1
            members[row.group_id] += 1
    return reduction_stats(count, len(members), members.values())


def combine_reduction_reports(reports: Iterable[ReductionReport]) -> ReductionReport:
    """合并多个片段的统计；组号只在片段内唯一，必须逐片段重放后再合并"""
    input_frames = emitted = 0
    histogram = Counter()
    for report in reports:
        input_frames += report.input_frames
        emitted += report.emitted_groups
        histogram.update(report.span_histogram)
    return reduction_stats(input_frames, emitted, histogram.elements())


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_trace_csv(rows: Iterable[TraceRow], path) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_FIELDS)
            for r in rows:
                writer.writerow(
                    [r.frame_index, r.kind, _fmt(r.similarity), _fmt(r.window_mean), r.decision, _fmt(r.group_id)]
                )


def read_trace_csv(path) -> List[TraceRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_FIELDS:
            raise FormatError(f"{path}: 轨迹表头不对: {reader.fieldnames}")
        for line_no, rec in enumerate(reader, start=2):
            try:
                rows.append(
                    TraceRow(
                        int(rec["frame_index"]),
                        rec["kind"],
                        float(rec["similarity"]) if rec["similarity"] else None,
                        float(rec["window_mean"]) if rec["window_mean"] else None,
                        rec["decision"],
                        int(rec["group_id"]) if rec["group_id"] else None,
                    )
                )
            except (TypeError, ValueError) as e:
                raise FormatError(f"{path}:{line_no}: {e}") from e
    return rows


def write_stats_csv(report: ReductionReport, path) -> None:
    """汇总行 + 空行 + 跨度直方图"""
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["input_frames", "emitted_groups", "reduction_ratio"])
            writer.writerow([report.input_frames, report.emitted_groups, f"{report.reduction_ratio:.6f}"])
            writer.writerow([])
            writer.writerow(["span", "count"])
            for span, count in report.span_histogram.items():
                writer.writerow([span, count])
