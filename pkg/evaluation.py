"""
评测 - 在合成语料上比较「不累积」和不同窗口大小的动态累积
清单 CSV 列: clip_id, spec, label, split（spec 路径相对清单所在目录）
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from accumulator import (
    DynamicAccumulator,
    TraceRow,
    combine_reduction_reports,
    normalize_accumulated,
    reduction_stats,
    reduction_stats_from_trace,
    run_dynamic_accumulation,
    single_frame_groups,
    write_trace_csv,
)
from classifier import classify_clip, dataset_from_clips, train
from codec import encode
from config import PipelineConfig, resolve_threads
from errors import FormatError, InputError, InvariantError
from features import feature_matrix
from partial_decoder import residual_stream
from pgm_io import atomic_path
from synthgen import MASK64, generate, load_clip_spec

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ["clip_id", "spec", "label", "split"]
SPLITS = ("train", "test")
NOACC = "noacc"


def mode_name(window_size: Optional[int]) -> str:
    return NOACC if window_size is None else f"ws{window_size}"


@dataclass(frozen=True)
class CorpusEntry:
    clip_id: str
    spec_path: Path
    label: str
    split: str


@dataclass
class ModeOutput:
    """一个片段在一种模式下的结果"""

    matrix: np.ndarray
    emitted: int
    spans: List[int]
    trace: List[TraceRow] = field(default_factory=list)


@dataclass
class ClipResult:
    entry: CorpusEntry
    input_frames: int
    modes: Dict[str, ModeOutput]
    seconds: float  # 单线程部分解码 + 动态累积（第一个窗口）耗时

    @property
    def frames_per_second(self) -> float:
        return self.input_frames / self.seconds if self.seconds > 0 else float("inf")


@dataclass
class ModeSummary:
    mode: str
    window_size: Optional[int]
    accuracy: float
    input_frames: int
    emitted_groups: int
    reduction_ratio: float
    per_class: Dict[str, List[int]]  # 标签 -> [正确数, 总数]
    confusion: np.ndarray


@dataclass
class EvaluationReport:
    label_names: List[str]
    summaries: List[ModeSummary]
    clips: List[ClipResult]

    def summary(self, mode: str) -> ModeSummary:
        for s in self.summaries:
            if s.mode == mode:
                return s
        raise KeyError(mode)


def load_manifest(path) -> List[CorpusEntry]:
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"无法读取清单 {path}: {e}") from e
    entries = []
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise FormatError(f"{path}: 清单表头必须是 {','.join(MANIFEST_FIELDS)}")
        for line_no, rec in enumerate(reader, start=2):
            if rec["split"] not in SPLITS:
                raise FormatError(f"{path}:{line_no}: split 必须是 train 或 test: {rec['split']!r}")
            entries.append(
                CorpusEntry(rec["clip_id"], path.parent / rec["spec"], rec["label"], rec["split"])
            )
    if not entries:
        raise FormatError(f"{path}: 清单为空")
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: clip_id 有重复")
    return entries


def _planes_to_output(groups, trace=None) -> ModeOutput:
    planes = [normalize_accumulated(g) for g in groups]
    return ModeOutput(feature_matrix(planes), len(groups), [g.member_count for g in groups], trace or [])


def process_clip(entry: CorpusEntry, config: PipelineConfig, window_sizes: Sequence[int]) -> ClipResult:
    """合成 -> 编码 -> 部分解码 -> 各模式的累积与特征"""
    spec = load_clip_spec(entry.spec_path)
    if config.seed is not None:
        spec = replace(spec, seed=(spec.seed + config.seed) & MASK64)
    data = encode(generate(spec), config.encoder)

    start = time.perf_counter()
    residuals = list(residual_stream(data))
    decode_seconds = time.perf_counter() - start

    cut = config.accumulator.cut_on_iframe
    baseline = list(single_frame_groups(residuals, cut))
    if not baseline:
        raise InputError(f"{entry.clip_id}: 没有可分类的残差帧")
    modes = {NOACC: _planes_to_output(baseline)}

    first_seconds = None
    for n in window_sizes:
        acc_config = replace(config.accumulator, window_size=n)
        acc = DynamicAccumulator(acc_config, record_trace=True)
        start = time.perf_counter()
        groups = list(run_dynamic_accumulation(residuals, acc_config, acc))
        if first_seconds is None:
            first_seconds = time.perf_counter() - start
        modes[mode_name(n)] = _planes_to_output(groups, acc.trace)

    seconds = decode_seconds + (first_seconds or 0.0)
    logger.info("片段 %s: %d 帧残差, %s", entry.clip_id, len(baseline),
                ", ".join(f"{m}={o.emitted}" for m, o in modes.items()))
    return ClipResult(entry, len(baseline), modes, seconds)


def _summarize(mode, window_size, results, label_ids, label_names, config) -> ModeSummary:
    train_items = [r for r in results if r.entry.split == "train"]
    test_items = [r for r in results if r.entry.split == "test"]
    if not train_items or not test_items:
        raise FormatError("清单必须同时包含 train 和 test 片段")

    dataset = dataset_from_clips(
        [r.modes[mode].matrix for r in train_items],
        [label_ids[r.entry.label] for r in train_items],
        config.partitions,
        dict(enumerate(label_names)),
    )
    model = train(dataset, config.k, partitions=config.partitions)

    n = len(label_names)
    confusion = np.zeros((n, n), dtype=np.int64)
    for r in test_items:
        predicted = classify_clip(model, r.modes[mode].matrix, config.partitions).label
        confusion[label_ids[r.entry.label], predicted] += 1
    correct = int(np.trace(confusion))
    per_class = {
        label_names[i]: [int(confusion[i, i]), int(confusion[i].sum())] for i in range(n)
    }

    input_frames = sum(r.input_frames for r in results)
    emitted = sum(r.modes[mode].emitted for r in results)
    spans = [s for r in results for s in r.modes[mode].spans]
    stats = reduction_stats(input_frames, emitted, spans)

    if window_size is not None:
        replay = combine_reduction_reports(reduction_stats_from_trace(r.modes[mode].trace) for r in results)
        if replay != stats:
            raise InvariantError(f"{mode}: 轨迹统计与累积输出不一致")

    accuracy = correct / len(test_items)
    logger.info("%s: 准确率 %.3f, 削减 %.3f", mode, accuracy, stats.reduction_ratio)
    return ModeSummary(
        mode, window_size, accuracy, input_frames, emitted, stats.reduction_ratio, per_class, confusion
    )


def run_evaluation(
    manifest,
    config: PipelineConfig,
    window_sizes: Sequence[int] = (10,),
    out_dir=None,
    progress: bool = False,
) -> EvaluationReport:
    """处理清单里的全部片段，逐模式训练、测试并汇总"""
    config.validate()
    entries = load_manifest(manifest)
    label_names: List[str] = []
    for e in entries:
        if e.label not in label_names:
            label_names.append(e.label)
    label_ids = {name: i for i, name in enumerate(label_names)}

    threads = resolve_threads(config.threads)
    logger.info("评测 %d 个片段, %d 个线程, 窗口 %s", len(entries), threads, list(window_sizes))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map 按提交顺序返回，结果与串行执行一致
        results = list(
            tqdm(
                pool.map(lambda e: process_clip(e, config, window_sizes), entries),
                total=len(entries),
                desc="clips",
                disable=not progress,
            )
        )

    summaries = [_summarize(NOACC, None, results, label_ids, label_names, config)]
    for n in window_sizes:
        summaries.append(_summarize(mode_name(n), n, results, label_ids, label_names, config))
    report = EvaluationReport(label_names, summaries, results)

    if out_dir is not None:
        write_report(report, out_dir, config.trace)
    return report


def _write_csv(path: Path, header, rows) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)


def write_report(report: EvaluationReport, out_dir, with_traces: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "summary.csv",
        ["mode", "window_size", "accuracy", "input_frames", "emitted_groups", "reduction_ratio"],
        [
            [s.mode, "" if s.window_size is None else s.window_size, f"{s.accuracy:.6f}",
             s.input_frames, s.emitted_groups, f"{s.reduction_ratio:.6f}"]
            for s in report.summaries
        ],
    )
    _write_csv(
        out / "per_class.csv",
        ["mode", "label", "correct", "total", "accuracy"],
        [
            [s.mode, label, c, t, f"{(c / t if t else 0.0):.6f}"]
            for s in report.summaries
            for label, (c, t) in s.per_class.items()
        ],
    )
    for s in report.summaries:
        _write_csv(
            out / f"confusion_{s.mode}.csv",
            ["actual\\predicted"] + report.label_names,
            [[name] + s.confusion[i].tolist() for i, name in enumerate(report.label_names)],
        )
    # 墙钟时间，不在确定性保证之内
    _write_csv(
        out / "throughput.csv",
        ["clip_id", "frames", "seconds", "frames_per_second"],
        [
            [r.entry.clip_id, r.input_frames, f"{r.seconds:.6f}", f"{r.frames_per_second:.2f}"]
            for r in report.clips
        ],
    )
    if with_traces:
        traces = out / "traces"
        traces.mkdir(exist_ok=True)
        for r in report.clips:
            for mode, output in r.modes.items():
                if mode != NOACC:
                    write_trace_csv(output.trace, traces / f"{r.entry.clip_id}_{mode}.csv")
    logger.info("评测结果已写入 %s", out)
