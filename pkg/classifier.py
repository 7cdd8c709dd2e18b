"""
分类器 - χ² 距离的 k 近邻分类和模型文件读写
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DimensionError, FormatError
from features import DEFAULT_EXTRACTOR, check_feature_vector, partition_and_vote, pot_pool
from pgm_io import atomic_path

logger = logging.getLogger(__name__)

MODEL_MAGIC = "RESACC-MODEL"
MODEL_VERSION = "v1"


def chi2_distance(x, y) -> float:
    """Σ (x_i - y_i)² / (x_i + y_i)，分母为 0 的维度记 0"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"特征维度不同: {x.shape} vs {y.shape}")
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("χ² 距离要求非负特征")
    num = (x - y) ** 2
    den = x + y
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(terms.sum())


def chi2_distances(exemplars: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """probe 到每个样本的 χ² 距离，逐行与 chi2_distance 一致"""
    num = (exemplars - probe) ** 2
    den = exemplars + probe
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return terms.sum(axis=1)


@dataclass
class LabeledDataset:
    """(特征, 标签) 列表 + 标签名表"""

    vectors: List[np.ndarray] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)
    label_names: Dict[int, str] = field(default_factory=dict)

    def add(self, vector, label: int) -> None:
        v = check_feature_vector(vector)
        if self.vectors and len(v) != len(self.vectors[0]):
            raise DimensionError(f"特征维度 {len(v)} 与数据集 {len(self.vectors[0])} 不一致")
        if label < 0:
            raise ValueError(f"标签必须是非负整数: {label}")
        self.vectors.append(v)
        self.labels.append(int(label))
        self.label_names.setdefault(int(label), str(label))

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return len(self.vectors[0]) if self.vectors else 0


@dataclass(frozen=True, eq=False)
class Model:
    """训练好的 k-NN 模型（只保存样本）"""

    exemplars: np.ndarray  # (M, D)
    labels: np.ndarray  # (M,)
    k: int
    label_names: Dict[int, str]
    extractor: str = DEFAULT_EXTRACTOR
    partitions: int = 8

    @property
    def dim(self) -> int:
        return self.exemplars.shape[1]


@dataclass
class ClipPrediction:
    """一个片段的分类结果：投票标签 + 每个分段的决策"""

    label: int
    decisions: List[int]
    scores: List[float]


def train(dataset: LabeledDataset, k: int, extractor: str = DEFAULT_EXTRACTOR, partitions: int = 8) -> Model:
    """惰性学习：原样保存样本"""
    if len(dataset) == 0:
        raise ConfigError("训练集为空")
    if not 1 <= k <= len(dataset):
        raise ConfigError(f"k 必须在 [1, {len(dataset)}] 内: {k}")
    exemplars = np.stack(dataset.vectors)
    exemplars.flags.writeable = False
    labels = np.array(dataset.labels, dtype=np.int64)
    labels.flags.writeable = False
    logger.info("训练: %d 个样本, %d 类, dim=%d, k=%d", len(dataset), len(set(dataset.labels)), dataset.dim, k)
    return Model(exemplars, labels, k, dict(sorted(dataset.label_names.items())), extractor, partitions)


def predict(model: Model, probe) -> Tuple[int, float]:
    """k 个最近邻多数表决，返回 (标签, 获胜标签的距离和)

    距离相同的邻居按插入顺序取；标签平票时取距离和小的，再取标签号小的。
    """
    probe = check_feature_vector(probe)
    if len(probe) != model.dim:
        raise DimensionError(f"探针维度 {len(probe)} 与模型 {model.dim} 不一致")
    dist = chi2_distances(model.exemplars, probe)
    nearest = np.argsort(dist, kind="stable")[: model.k]
    votes = Counter()
    summed: Dict[int, float] = {}
    for idx in nearest:
        label = int(model.labels[idx])
        votes[label] += 1
        summed[label] = summed.get(label, 0.0) + float(dist[idx])
    top = max(votes.values())
    winner = min((label for label, n in votes.items() if n == top), key=lambda lb: (summed[lb], lb))
    return winner, summed[winner]


def classify_clip(model: Model, matrix, partitions: Optional[int] = None) -> ClipPrediction:
    """池化成 P 段，逐段分类后投票"""
    partitions = partitions or model.partitions
    pooled = pot_pool(matrix, partitions)
    decisions = []
    scores = []
    for row in pooled:
        label, score = predict(model, row)
        decisions.append(label)
        scores.append(score)
    label = partition_and_vote(decisions, scores)
    logger.debug("分段决策 %s -> %d", decisions, label)
    return ClipPrediction(label, decisions, scores)


def dataset_from_clips(
    matrices: Sequence[np.ndarray],
    labels: Sequence[int],
    partitions: int,
    label_names: Optional[Dict[int, str]] = None,
) -> LabeledDataset:
    """每个片段池化出的 P 个向量都作为带该片段标签的样本"""
    if len(matrices) != len(labels):
        raise ValueError(f"片段数 {len(matrices)} 与标签数 {len(labels)} 不一致")
    dataset = LabeledDataset()
    for matrix, label in zip(matrices, labels):
        for row in pot_pool(matrix, partitions):
            dataset.add(row, label)
    if label_names:
        dataset.label_names.update(label_names)
    return dataset


def save_model(model: Model, path) -> None:
    """版本化文本格式，浮点用最短可还原表示"""
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION} dim={model.dim} k={model.k}",
        f"extractor={model.extractor}",
        f"partitions={model.partitions}",
        f"labels={len(model.label_names)}",
    ]
    lines += [f"{label},{name}" for label, name in model.label_names.items()]
    lines.append(f"exemplars={len(model.labels)}")
    for label, row in zip(model.labels, model.exemplars):
        lines.append(",".join([str(int(label))] + [repr(float(v)) for v in row]))
    with atomic_path(path) as tmp:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("模型已保存: %s", path)


def _key_value(line: str, key: str, path) -> str:
    prefix = key + "="
    if not line.startswith(prefix):
        raise FormatError(f"{path}: 需要 {prefix}...，得到 {line!r}")
    return line[len(prefix) :]


def load_model(path) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"无法读取模型 {path}: {e}") from e
    lines = text.splitlines()
    try:
        head = lines[0].split()
        if len(head) != 4 or head[0] != MODEL_MAGIC:
            raise FormatError(f"{path}: 不是模型文件")
        if head[1] != MODEL_VERSION:
            raise FormatError(f"{path}: 不支持的模型版本 {head[1]}")
        dim = int(_key_value(head[2], "dim", path))
        k = int(_key_value(head[3], "k", path))
        extractor = _key_value(lines[1], "extractor", path)
        partitions = int(_key_value(lines[2], "partitions", path))
        n_labels = int(_key_value(lines[3], "labels", path))
        names = {}
        pos = 4
        for line in lines[pos : pos + n_labels]:
            label, name = line.split(",", 1)
            names[int(label)] = name
        pos += n_labels
        n_ex = int(_key_value(lines[pos], "exemplars", path))
        rows = lines[pos + 1 : pos + 1 + n_ex]
        if len(rows) != n_ex:
            raise FormatError(f"{path}: 样本行数 {len(rows)} != {n_ex}")
        labels = []
        exemplars = []
        for line in rows:
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise FormatError(f"{path}: 样本列数 {len(parts) - 1} != dim {dim}")
            labels.append(int(parts[0]))
            exemplars.append([float(v) for v in parts[1:]])
    except IndexError:
        raise FormatError(f"{path}: 模型文件被截断") from None
    except ValueError as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: {e}") from e

    dataset = LabeledDataset()
    for vec, label in zip(exemplars, labels):
        dataset.add(vec, label)
    dataset.label_names = names
    return train(dataset, k, extractor, partitions)
