"""
残差累积管线 - 命令行入口
synth / encode / residuals / accumulate / featurize / train / predict / evaluate
"""

import argparse
import csv
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from accumulator import (
    DynamicAccumulator,
    normalize_accumulated,
    reduction_stats,
    run_dynamic_accumulation,
    write_stats_csv,
    write_trace_csv,
)
from classifier import classify_clip, dataset_from_clips, load_model, save_model, train
from codec import encode, ingest_frames
from config import (
    DEFAULT_GOP_SIZE,
    DEFAULT_K,
    DEFAULT_PARTITIONS,
    DEFAULT_QSCALE,
    DEFAULT_SEARCH_RANGE,
    DEFAULT_SIM_C,
    DEFAULT_WINDOW_SIZE,
    AccumulatorConfig,
    EncoderConfig,
    PipelineConfig,
    parse_bool,
)
from errors import EXIT_INPUT, EXIT_OK, ConfigError, FormatError, InputError, ResaccError
from evaluation import run_evaluation
from features import FeatureRow, extract_features, read_features_csv, write_features_csv
from partial_decoder import export_residual_pgm, residual_stream
from pgm_io import atomic_path, read_pgm, staged_files, write_pgm
from synthgen import generate, load_clip_spec, write_clip_pgms

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s.%(msecs)03d %(levelname)-7s [%(filename)s:%(lineno)d] %(message)s"
ACC_NAME = re.compile(r"acc_(\d+)_(\d+)-(\d+)\.pgm$")


def _bool_arg(text: str) -> bool:
    try:
        return parse_bool(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _sweep_arg(text: str) -> List[int]:
    try:
        sizes = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"窗口列表无效: {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("窗口列表为空")
    return sizes


def setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%H:%M:%S")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v 显示 INFO，-vv 显示 DEBUG")
    common.add_argument("--window-size", type=int, default=DEFAULT_WINDOW_SIZE, help="时间窗口大小 N")
    common.add_argument("--sim-c", type=float, default=DEFAULT_SIM_C, help="相似度稳定常数 c")
    common.add_argument("--qscale", type=int, default=DEFAULT_QSCALE, help="量化步长")
    common.add_argument("--gop", type=int, default=DEFAULT_GOP_SIZE, help="I 帧周期")
    common.add_argument("--search-range", type=int, default=DEFAULT_SEARCH_RANGE, help="运动搜索半径")
    common.add_argument("--partitions", type=int, default=DEFAULT_PARTITIONS, help="时间分段数")
    common.add_argument("--k", type=int, default=DEFAULT_K, help="近邻数")
    common.add_argument("--cut-on-iframe", type=_bool_arg, default=True, metavar="BOOL", help="I 帧是否强制切分")
    common.add_argument("--seed", type=int, default=None, help="随机种子（覆盖片段描述里的 seed）")
    common.add_argument("--out-dir", default=None, help="输出目录")
    common.add_argument("--trace", action="store_true", help="输出决策轨迹 CSV")

    parser = argparse.ArgumentParser(description="压缩域残差动态累积管线")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="按片段描述生成 PGM 序列")
    p.add_argument("--spec", required=True, help="ClipSpec 文件")

    p = sub.add_parser("encode", parents=[common], help="PGM 序列编码为 .crv")
    p.add_argument("--input", required=True, help="PGM 通配模式或 raw:<path>:<W>x<H>")
    p.add_argument("--output", required=True, help="输出 .crv 文件")

    p = sub.add_parser("residuals", parents=[common], help="部分解码，导出残差统计")
    p.add_argument("--input", required=True, help=".crv 文件")
    p.add_argument("--pgm", action="store_true", help="同时导出残差 PGM")

    p = sub.add_parser("accumulate", parents=[common], help="动态累积残差")
    p.add_argument("--input", required=True, help=".crv 文件")
    p.add_argument("--pgm", action="store_true", help="导出归一化的累积残差 PGM")

    p = sub.add_parser("featurize", parents=[common], help="提取特征")
    p.add_argument("--input", required=True, help=".crv 文件或 acc_*.pgm 所在目录")
    p.add_argument("--output", required=True, help="特征 CSV")

    p = sub.add_parser("train", parents=[common], help="训练 k-NN 模型")
    p.add_argument("--manifest", required=True, help="CSV: features,label")
    p.add_argument("--output", required=True, help="模型文件")

    p = sub.add_parser("predict", parents=[common], help="对一个片段分类")
    p.add_argument("--features", required=True, help="特征 CSV")
    p.add_argument("--model", required=True, help="模型文件")

    p = sub.add_parser("evaluate", parents=[common], help="在语料上评测")
    p.add_argument("--manifest", required=True, help="CSV: clip_id,spec,label,split")
    p.add_argument("--sweep", type=_sweep_arg, default=None, help="窗口大小列表，如 10,30,50")
    p.add_argument("--progress", action="store_true", help="显示进度条")
    return parser


def build_config(args) -> PipelineConfig:
    config = PipelineConfig(
        encoder=EncoderConfig(args.qscale, args.gop, args.search_range),
        accumulator=AccumulatorConfig(args.window_size, args.sim_c, args.cut_on_iframe),
        partitions=args.partitions,
        k=args.k,
        seed=args.seed,
        out_dir=args.out_dir,
        trace=args.trace,
    )
    return config.validate()


def _out_dir(config: PipelineConfig) -> Path:
    if not config.out_dir:
        raise ConfigError("需要 --out-dir")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_stream(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"无法读取 {path}: {e}") from e


def _write_rows(path: Path, header, rows) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)


def cmd_synth(args, config: PipelineConfig) -> int:
    spec = load_clip_spec(args.spec, seed=config.seed)
    frames = generate(spec)
    paths = write_clip_pgms(frames, _out_dir(config))
    print(f"生成 {len(paths)} 帧 {spec.width}x{spec.height} -> {config.out_dir}")
    return EXIT_OK


def cmd_encode(args, config: PipelineConfig) -> int:
    frames = ingest_frames(args.input)
    data = encode(frames, config.encoder)
    with atomic_path(args.output) as tmp:
        tmp.write_bytes(data)
    print(f"编码 {len(frames)} 帧 -> {args.output} ({len(data)} 字节)")
    return EXIT_OK


def cmd_residuals(args, config: PipelineConfig) -> int:
    out = _out_dir(config)
    rows = []
    # 码流中途损坏时已写的 PGM 一并删除
    with staged_files(out) as staged:
        for frame in residual_stream(_read_stream(args.input)):
            v = frame.values.astype(np.int64)
            rows.append(
                [frame.frame_index, frame.kind.name, int(v.min()), int(v.max()),
                 f"{np.abs(v).mean():.6f}", int((v * v).sum())]
            )
            if args.pgm:
                export_residual_pgm(frame, staged.path(f"residual_{frame.frame_index:04d}.pgm"))
    _write_rows(out / "residuals.csv", ["frame_index", "kind", "min", "max", "mean_abs", "energy"], rows)
    print(f"导出 {len(rows)} 帧残差 -> {out}")
    return EXIT_OK


def cmd_accumulate(args, config: PipelineConfig) -> int:
    out = _out_dir(config)
    acc = DynamicAccumulator(config.accumulator, record_trace=config.trace)
    spans = []
    stream = residual_stream(_read_stream(args.input))
    with staged_files(out) as staged:
        for group in run_dynamic_accumulation(stream, config.accumulator, acc):
            spans.append(group.member_count)
            if args.pgm:
                name = f"acc_{group.group_id:04d}_{group.first_index:06d}-{group.last_index:06d}.pgm"
                write_pgm(staged.path(name), normalize_accumulated(group))
    report = reduction_stats(acc.input_frames, acc.emitted, spans)
    write_stats_csv(report, out / "stats.csv")
    if config.trace:
        write_trace_csv(acc.trace, out / "trace.csv")
    print(
        f"累积: {report.input_frames} 帧 -> {report.emitted_groups} 组, "
        f"削减 {report.reduction_ratio:.1%}"
    )
    return EXIT_OK


def _feature_rows_from_dir(path: Path) -> List[FeatureRow]:
    rows = []
    for pgm in sorted(path.glob("acc_*.pgm")):
        m = ACC_NAME.search(pgm.name)
        if m is None:
            raise FormatError(f"无法从文件名解析组信息: {pgm.name}")
        gid, first, last = (int(g) for g in m.groups())
        rows.append(FeatureRow(gid, first, last, extract_features(read_pgm(pgm))))
    if not rows:
        raise InputError(f"{path} 下没有 acc_*.pgm")
    return rows


def cmd_featurize(args, config: PipelineConfig) -> int:
    source = Path(args.input)
    if source.is_dir():
        rows = _feature_rows_from_dir(source)
    else:
        stream = residual_stream(_read_stream(source))
        rows = [
            FeatureRow(g.group_id, g.first_index, g.last_index, extract_features(normalize_accumulated(g)))
            for g in run_dynamic_accumulation(stream, config.accumulator)
        ]
    write_features_csv(rows, args.output)
    print(f"提取 {len(rows)} 行特征 -> {args.output}")
    return EXIT_OK


def _matrix(rows: List[FeatureRow]) -> np.ndarray:
    if not rows:
        raise InputError("特征 CSV 为空")
    return np.stack([r.values for r in rows])


def cmd_train(args, config: PipelineConfig) -> int:
    manifest = Path(args.manifest)
    try:
        with open(manifest, newline="", encoding="utf-8") as f:
            records = list(csv.DictReader(f))
    except OSError as e:
        raise InputError(f"无法读取清单 {manifest}: {e}") from e
    if not records or set(records[0]) != {"features", "label"}:
        raise FormatError(f"{manifest}: 清单必须有 features,label 两列")

    names: List[str] = []
    matrices, labels = [], []
    for rec in records:
        if rec["label"] not in names:
            names.append(rec["label"])
        matrices.append(_matrix(read_features_csv(manifest.parent / rec["features"])))
        labels.append(names.index(rec["label"]))
    dataset = dataset_from_clips(matrices, labels, config.partitions, dict(enumerate(names)))
    model = train(dataset, config.k, partitions=config.partitions)
    save_model(model, args.output)
    print(f"训练完成: {len(records)} 个片段, {len(dataset)} 个样本 -> {args.output}")
    return EXIT_OK


def cmd_predict(args, config: PipelineConfig) -> int:
    model = load_model(args.model)
    result = classify_clip(model, _matrix(read_features_csv(args.features)), config.partitions)
    names = model.label_names
    for i, (label, score) in enumerate(zip(result.decisions, result.scores)):
        print(f"  分段 {i}: {names.get(label, label)} ({score:.4f})")
    print(f"预测: {names.get(result.label, result.label)}")
    if config.out_dir:
        rows = [[i, names.get(lb, lb), repr(s)] for i, (lb, s) in enumerate(zip(result.decisions, result.scores))]
        rows.append(["vote", names.get(result.label, result.label), ""])
        _write_rows(_out_dir(config) / "decisions.csv", ["partition", "label", "score"], rows)
    return EXIT_OK


def cmd_evaluate(args, config: PipelineConfig) -> int:
    sweep = args.sweep or [config.accumulator.window_size]
    report = run_evaluation(args.manifest, config, sweep, _out_dir(config), progress=args.progress)
    print(f"{'模式':<8}{'准确率':>8}{'输入帧':>8}{'输出组':>8}{'削减':>8}")
    for s in report.summaries:
        print(f"{s.mode:<8}{s.accuracy:>8.3f}{s.input_frames:>8}{s.emitted_groups:>8}{s.reduction_ratio:>8.3f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "residuals": cmd_residuals,
    "accumulate": cmd_accumulate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """程序入口，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = build_config(args)
        return COMMANDS[args.command](args, config)
    except ResaccError as e:
        print(f"错误: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
