"""
特征 - 网格能量 + 梯度方向直方图特征、时间分段最大池化、分段投票
"""

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from errors import FormatError
from pgm_io import atomic_path

logger = logging.getLogger(__name__)

GRID = 4
ORIENT_BINS = 8
CELL_DIM = 1 + ORIENT_BINS
FEATURE_DIM = GRID * GRID * CELL_DIM  # 144
DEFAULT_EXTRACTOR = "grid-hog-4x4x9"

FeatureVector = np.ndarray  # (D,) float64，非负
FeatureMatrix = np.ndarray  # (T, D)


@dataclass(frozen=True, eq=False)
class FeatureRow:
    """特征 CSV 的一行：一个累积残差的特征"""

    group_id: int
    first_index: int
    last_index: int
    values: np.ndarray


def _pad_to_grid(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    pad_h = (-h) % GRID
    pad_w = (-w) % GRID
    if pad_h or pad_w:
        plane = np.pad(plane, ((0, pad_h), (0, pad_w)), mode="edge")
    return plane


def extract_features(plane: np.ndarray) -> FeatureVector:
    """4x4 网格，每格 [偏离 128 的平均能量, 8 个方向的梯度直方图]

    梯度用中心差分，方向取无符号 [0, π)，按幅值加权，每格 L1 归一化。
    """
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise FormatError(f"特征提取需要非空二维平面，得到 shape={plane.shape}")
    p = _pad_to_grid(plane.astype(np.float64))
    h, w = p.shape
    ch, cw = h // GRID, w // GRID

    deviation = np.abs(p - 128.0).reshape(GRID, ch, GRID, cw)
    energy = deviation.mean(axis=(1, 3)).reshape(-1)

    if h > 1 and w > 1:
        gy, gx = np.gradient(p)
    else:
        gy = np.zeros_like(p)
        gx = np.zeros_like(p)
    magnitude = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.floor(theta / (np.pi / ORIENT_BINS)).astype(np.int64) % ORIENT_BINS

    rows = np.arange(h) // ch
    cols = np.arange(w) // cw
    cell = rows[:, None] * GRID + cols[None, :]
    hist = np.bincount(
        (cell * ORIENT_BINS + bins).ravel(),
        weights=magnitude.ravel(),
        minlength=GRID * GRID * ORIENT_BINS,
    ).reshape(GRID * GRID, ORIENT_BINS)
    totals = hist.sum(axis=1, keepdims=True)
    hist = np.divide(hist, totals, out=np.zeros_like(hist), where=totals > 0)

    return np.concatenate([energy[:, None], hist], axis=1).reshape(-1)


EXTRACTORS: Dict[str, Callable[[np.ndarray], FeatureVector]] = {
    DEFAULT_EXTRACTOR: extract_features,
}


def get_extractor(name: str) -> Callable[[np.ndarray], FeatureVector]:
    try:
        return EXTRACTORS[name]
    except KeyError:
        raise FormatError(f"未知的特征提取器: {name!r}") from None


def feature_matrix(planes: Sequence[np.ndarray], extractor: str = DEFAULT_EXTRACTOR) -> FeatureMatrix:
    """按时间顺序把一串平面变成 T x D 矩阵"""
    fn = get_extractor(extractor)
    if not planes:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([fn(p) for p in planes])


def segment_bounds(total: int, partitions: int) -> List[range]:
    """T 行分成 P 段，大小相差不超过 1，多出来的行给前面的段"""
    base, extra = divmod(total, partitions)
    bounds = []
    start = 0
    for i in range(partitions):
        size = base + (1 if i < extra else 0)
        bounds.append(range(start, start + size))
        start += size
    return bounds


def pot_pool(matrix: FeatureMatrix, partitions: int) -> np.ndarray:
    """时间分段最大池化，返回 (P, D)

    T < P 时，第 i 段取第 min(i, T-1) 行。
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if partitions < 1:
        raise ValueError(f"partitions 必须 >= 1: {partitions}")
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise FormatError(f"池化需要至少一行的 T x D 矩阵，得到 shape={matrix.shape}")
    total = matrix.shape[0]
    pooled = np.empty((partitions, matrix.shape[1]), dtype=np.float64)
    for i, seg in enumerate(segment_bounds(total, partitions)):
        if len(seg) == 0:
            pooled[i] = matrix[min(i, total - 1)]
        else:
            pooled[i] = matrix[seg.start : seg.stop].max(axis=0)
    return pooled


def partition_and_vote(decisions: Sequence[int], tiebreak_scores: Sequence[float]) -> int:
    """多数投票；平票时取得分和最小的标签，再取标签号最小的"""
    if not decisions:
        raise ValueError("没有可投票的分段决策")
    if len(decisions) != len(tiebreak_scores):
        raise ValueError(f"决策数 {len(decisions)} 与得分数 {len(tiebreak_scores)} 不一致")
    votes = Counter(decisions)
    top = max(votes.values())
    tied = [label for label, n in votes.items() if n == top]
    if len(tied) == 1:
        return tied[0]
    summed = {label: 0.0 for label in tied}
    for label, score in zip(decisions, tiebreak_scores):
        if label in summed:
            summed[label] += score
    return min(tied, key=lambda label: (summed[label], label))


def check_feature_vector(values) -> FeatureVector:
    """特征必须是有限的非负实数"""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise FormatError(f"特征向量必须是一维，得到 shape={v.shape}")
    if not np.all(np.isfinite(v)):
        raise FormatError("特征向量含有非有限值")
    if np.any(v < 0):
        raise FormatError("特征向量含有负值")
    return v


def feature_header(dim: int) -> List[str]:
    return ["group_id", "first_index", "last_index"] + [f"f{i}" for i in range(dim)]


def write_features_csv(rows: Sequence[FeatureRow], path) -> None:
    dim = len(rows[0].values) if rows else FEATURE_DIM
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(feature_header(dim))
            for r in rows:
                if len(r.values) != dim:
                    raise FormatError(f"第 {r.group_id} 组的特征维度 {len(r.values)} != {dim}")
                writer.writerow(
                    [r.group_id, r.first_index, r.last_index] + [repr(float(x)) for x in r.values]
                )
    logger.info("写出 %d 行特征到 %s", len(rows), path)


def read_features_csv(path) -> List[FeatureRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:3] != ["group_id", "first_index", "last_index"]:
            raise FormatError(f"{path}: 特征 CSV 表头不对")
        dim = len(header) - 3
        if header != feature_header(dim):
            raise FormatError(f"{path}: 特征列名不对")
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != dim + 3:
                raise FormatError(f"{path}:{line_no}: 列数 {len(rec)} != {dim + 3}")
            try:
                values = check_feature_vector([float(x) for x in rec[3:]])
                rows.append(FeatureRow(int(rec[0]), int(rec[1]), int(rec[2]), values))
            except ValueError as e:
                raise FormatError(f"{path}:{line_no}: {e}") from e
    return rows
