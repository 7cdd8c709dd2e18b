#!/usr/bin/env python3
"""
调试辅助脚本
用于检查 CRV 码流的结构和内容
"""

import sys
import os
import argparse
from collections import Counter
from typing import List, Optional

import numpy as np

# 确保能导入项目模块
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

try:
    from accumulator import DynamicAccumulator, reduction_stats, run_dynamic_accumulation
    from codec import HEADER_SIZE, MB_SIZE, FrameKind, StreamHeader, rle_encode
    from config import AccumulatorConfig
    from errors import BitstreamError
    from transform import zigzag
    from partial_decoder import decode_frame_at, parse_header, read_frame_record
except ImportError as e:
    print(f"错误: 无法导入项目模块: {e}")
    print("请确保在项目根目录运行此脚本")
    sys.exit(1)

# 残差的宽松上界（IDCT 之后）
RESIDUAL_BOUND = 255 * 8


class DebugHelper:
    """调试辅助类"""

    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as f:
            self.data = f.read()
        self.errors: List[str] = []
        self.warnings: List[str] = []
        self.header: Optional[StreamHeader] = None
        self.offsets: List[int] = []
        self.kinds: Counter = Counter()
        self.frame_bytes: List[int] = []
        self.energies: List[int] = []
        # 默认参数下的累积预览
        self.preview = None

    def check_header(self) -> bool:
        """检查流头部"""
        print("=" * 60)
        print("检查流头部")
        print("=" * 60)

        try:
            self.header = parse_header(self.data)
        except BitstreamError as e:
            self.errors.append(f"头部无效: {e}")
            return False

        h = self.header
        print(f"✓ 头部有效: {h.width}x{h.height}, {h.frame_count} 帧")
        print(f"  gop_size={h.gop_size}, qscale={h.qscale}, search_range={h.search_range}")
        return True

    def check_frames(self) -> bool:
        """逐帧扫描：帧类型位置、运动矢量范围"""
        print("\n" + "=" * 60)
        print("检查帧记录")
        print("=" * 60)

        if self.header is None:
            self.errors.append("头部无效，跳过帧检查")
            return False

        h = self.header
        all_ok = True
        offset = HEADER_SIZE
        self.offsets = []
        self.kinds.clear()
        self.frame_bytes = []
        for i in range(h.frame_count):
            self.offsets.append(offset)
            try:
                record, offset = read_frame_record(self.data, offset, h, i)
            except BitstreamError as e:
                self.errors.append(f"第 {i} 帧解析失败: {e}")
                return False
            self.kinds[record.kind.name] += 1
            self.frame_bytes.append(offset - self.offsets[-1])

            expected = FrameKind.I if i % h.gop_size == 0 else FrameKind.P
            if record.kind is not expected:
                self.errors.append(f"第 {i} 帧类型为 {record.kind.name}，应为 {expected.name}")
                all_ok = False

            mvs = record.motion_vectors.astype(np.int64)
            if record.kind is FrameKind.I and np.any(mvs):
                self.errors.append(f"第 {i} 帧是 I 帧但运动矢量不为 0")
                all_ok = False
            if np.any(np.abs(mvs) > h.search_range):
                self.errors.append(f"第 {i} 帧有运动矢量超出搜索范围 {h.search_range}")
                all_ok = False

            # 参考块必须在画面内
            ys = np.arange(h.mb_rows)[:, None] * MB_SIZE + mvs[:, :, 1]
            xs = np.arange(h.mb_cols)[None, :] * MB_SIZE + mvs[:, :, 0]
            if np.any(ys < 0) or np.any(xs < 0) or np.any(ys + MB_SIZE > h.height) or np.any(
                xs + MB_SIZE > h.width
            ):
                self.errors.append(f"第 {i} 帧有参考块超出画面")
                all_ok = False

        if offset != len(self.data):
            self.warnings.append(f"码流末尾有 {len(self.data) - offset} 字节多余数据")

        if all_ok:
            print(f"✓ {h.frame_count} 帧记录结构正确")
        return all_ok

    def check_residuals(self) -> bool:
        """检查部分解码出的残差是否在宽松范围内"""
        print("\n" + "=" * 60)
        print("检查残差范围")
        print("=" * 60)

        if self.header is None or len(self.offsets) != self.header.frame_count:
            return False

        all_ok = True
        frames = []
        for i in range(len(self.offsets)):
            frame = decode_frame_at(self.data, self.offsets, i)
            frames.append(frame)
            peak = int(np.abs(frame.values.astype(np.int32)).max()) if frame.values.size else 0
            if peak > RESIDUAL_BOUND:
                self.errors.append(f"第 {i} 帧残差 {peak} 超出 ±{RESIDUAL_BOUND}")
                all_ok = False
            elif peak > 255:
                self.warnings.append(f"第 {i} 帧残差峰值 {peak} 超过 255（量化误差）")

        self.energies = [f.energy for f in frames if f.kind is FrameKind.P]
        config = AccumulatorConfig()
        acc = DynamicAccumulator(config)
        spans = [g.member_count for g in run_dynamic_accumulation(frames, config, acc)]
        self.preview = reduction_stats(acc.input_frames, acc.emitted, spans)

        if all_ok:
            print("✓ 残差范围正常")
        return all_ok

    def stats_lines(self) -> List[str]:
        """码流、残差和累积预览的统计，摘要和报告共用"""
        lines = []
        h = self.header
        if h is None:
            return ["头部无效，无统计"]
        kinds = ", ".join(f"{k} {n}" for k, n in sorted(self.kinds.items())) or "无"
        lines.append(f"码流: {h.width}x{h.height}, 头部 {h.frame_count} 帧, 已解析 {len(self.offsets)} 帧 ({kinds})")
        if self.frame_bytes:
            mean_bytes = sum(self.frame_bytes) / len(self.frame_bytes)
            lines.append(f"每帧字节: 平均 {mean_bytes:.1f}, 最大 {max(self.frame_bytes)}")
        if self.energies:
            zero = sum(1 for e in self.energies if e == 0)
            mean_energy = sum(self.energies) / len(self.energies)
            lines.append(
                f"P 帧残差能量: 最小 {min(self.energies)}, 平均 {mean_energy:.1f}, "
                f"最大 {max(self.energies)}, 全零 {zero} 帧"
            )
        if self.preview is not None:
            p = self.preview
            longest = max(p.span_histogram) if p.span_histogram else 0
            lines.append(
                f"累积预览 (N={AccumulatorConfig().window_size}): {p.input_frames} 帧 -> "
                f"{p.emitted_groups} 组, 削减 {p.reduction_ratio:.1%}, 最长组 {longest} 帧"
            )
        return lines

    def print_summary(self):
        """打印统计和检查结果"""
        print("\n" + "=" * 60)
        print("调试摘要")
        print("=" * 60)
        for line in self.stats_lines():
            print(f"  {line}")

        print(f"\n错误 {len(self.errors)} 个, 警告 {len(self.warnings)} 个")
        for label, items in (("错误", self.errors), ("警告", self.warnings)):
            for i, item in enumerate(items, 1):
                print(f"  [{label} {i}] {item}")
        if not self.errors:
            print("✓ 码流检查通过")

    def generate_report(self, filename: str = "debug_report.txt"):
        """生成调试报告"""
        with open(filename, "w", encoding="utf-8") as f:
            f.write("CRV 码流调试报告\n")
            f.write("=" * 60 + "\n\n")

            f.write(f"文件: {self.path} ({len(self.data)} 字节)\n")
            if self.header is not None:
                h = self.header
                f.write(f"  - 帧数: {h.frame_count}\n")
                f.write(f"  - gop_size / qscale / search_range: {h.gop_size} / {h.qscale} / {h.search_range}\n")
            for line in self.stats_lines():
                f.write(f"  - {line}\n")
            f.write(f"  - 错误数: {len(self.errors)}\n")
            f.write(f"  - 警告数: {len(self.warnings)}\n\n")

            for label, items in (("错误", self.errors), ("警告", self.warnings)):
                if items:
                    f.write(f"{label}:\n")
                    f.writelines(f"  - {item}\n" for item in items)
                    f.write("\n")

            f.write("帧偏移表:\n")
            for i, offset in enumerate(self.offsets):
                size = f" ({self.frame_bytes[i]} 字节)" if i < len(self.frame_bytes) else " (解析失败)"
                f.write(f"  {i:4d}. offset {offset}{size}\n")

        print(f"\n报告已保存到: {filename}")

    def run_all_checks(self) -> bool:
        """运行所有检查"""
        ok1 = self.check_header()
        ok2 = ok1 and self.check_frames()
        ok3 = ok2 and self.check_residuals()
        self.print_summary()
        return ok1 and ok2 and ok3


def busiest_macroblocks(record, header: StreamHeader, limit: int = 5):
    """按编码字节数排序的宏块：(宏块号, 字节数, MacroBlockRecord)"""
    sized = []
    for m, mb in enumerate(record.macroblocks(header.qscale)):
        # 2 字节运动矢量 + 每个游程对 3 字节（含块结束哨兵）
        pairs = sum(len(rle_encode(zigzag(b.values))) for b in mb.blocks)
        sized.append((m, 2 + 3 * pairs, mb))
    sized.sort(key=lambda item: (-item[1], item[0]))
    return sized[:limit]


def print_frame_info(helper: DebugHelper, index: int):
    """打印某一帧的详细信息"""
    h = helper.header = parse_header(helper.data)
    if not helper.offsets:
        helper.check_frames()
    if not 0 <= index < len(helper.offsets):
        print(f"帧号越界: {index}（共 {len(helper.offsets)} 帧）")
        return

    record, end = read_frame_record(helper.data, helper.offsets[index], h, index)
    frame = decode_frame_at(helper.data, helper.offsets, index)
    values = frame.values.astype(np.int64)

    print("\n" + "=" * 60)
    print(f"第 {index} 帧 ({record.kind.name})")
    print("=" * 60)
    print(f"偏移: {helper.offsets[index]} - {end} ({end - helper.offsets[index]} 字节)")
    print(f"非零量化系数: {record.nonzero_count}")
    print(f"残差范围: [{values.min()}, {values.max()}]")
    print(f"残差能量: {int((values * values).sum())}")

    print("\n运动矢量分布:")
    mvs = Counter(map(tuple, record.motion_vectors.reshape(-1, 2).tolist()))
    for (dx, dy), n in mvs.most_common(10):
        print(f"  ({dx:+d}, {dy:+d}): {n}")

    print("\n字节最多的宏块:")
    for m, size, mb in busiest_macroblocks(record, h, limit=5):
        row, col = divmod(m, h.mb_cols)
        nonzero = sum(int(np.count_nonzero(b.values)) for b in mb.blocks)
        print(f"  宏块 {m} (行 {row}, 列 {col}): {size} 字节, MV ({mb.mv.dx:+d}, {mb.mv.dy:+d}), 非零系数 {nonzero}")


def main(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser(description="CRV 码流调试工具")
    parser.add_argument("stream", help="CRV 文件")
    parser.add_argument("--check", action="store_true", help="运行所有检查")
    parser.add_argument("--report", action="store_true", help="生成调试报告")
    parser.add_argument("--frame", type=int, help="查看特定帧的信息")
    parser.add_argument("--list", action="store_true", help="列出帧偏移表")

    args = parser.parse_args(argv)

    try:
        helper = DebugHelper(args.stream)
    except OSError as e:
        print(f"错误: 无法读取 {args.stream}: {e}")
        sys.exit(3)

    if args.frame is not None:
        try:
            print_frame_info(helper, args.frame)
        except BitstreamError as e:
            print(f"错误: {e}")
            sys.exit(3)
        return

    if args.list:
        if not helper.check_header() or not helper.check_frames():
            helper.print_summary()
            sys.exit(1)
        print("\n帧偏移表:")
        print("=" * 60)
        for i, offset in enumerate(helper.offsets):
            print(f"{i:4d}. offset {offset}")
        return

    # 默认运行检查
    success = helper.run_all_checks()

    if args.report:
        helper.generate_report()

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
