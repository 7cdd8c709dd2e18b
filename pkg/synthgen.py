"""
合成片段 - 按分段恒速运动事件生成确定性的测试帧序列

ClipSpec 文本格式（每行 key = value，# 开头为注释，event 可重复，按出现顺序）:

    width = 320
    height = 240
    background = 64
    sprite_width = 64
    sprite_height = 64
    intensity = 200
    origin_x = 64
    origin_y = 32
    rings = 4
    ring_width = 8
    flicker = 0
    noise = 0
    seed = 1
    event = 12 8 0      # 持续帧数 vx vy
"""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import List, Tuple

import numpy as np

from codec import MB_SIZE, Frame
from errors import ConfigError, FormatError, InputError
from pgm_io import write_pgm

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

Event = Tuple[int, int, int]  # (duration, vx, vy)


@dataclass(frozen=True)
class ClipSpec:
    """合成片段描述"""

    width: int = 320
    height: int = 240
    events: Tuple[Event, ...] = ((10, 0, 0),)
    sprite_width: int = 32
    sprite_height: int = 32
    intensity: int = 200
    origin_x: int = 0
    origin_y: int = 0
    rings: int = 0  # 边缘渐变圈数，0 表示实心
    ring_width: int = 8
    background: int = 64
    noise: int = 0  # 均匀整数噪声幅度 ±a
    flicker: int = 0  # 奇数帧亮度增量
    seed: int = 0

    @property
    def frame_count(self) -> int:
        return sum(e[0] for e in self.events)

    def validate(self) -> "ClipSpec":
        if self.width <= 0 or self.height <= 0 or self.width % MB_SIZE or self.height % MB_SIZE:
            raise ConfigError(f"片段尺寸必须是 16 的正整数倍: {self.width}x{self.height}")
        if not self.events:
            raise ConfigError("至少需要一个运动事件")
        for duration, _, _ in self.events:
            if duration < 1:
                raise ConfigError(f"事件持续帧数必须 >= 1: {duration}")
        if self.sprite_width < 1 or self.sprite_height < 1:
            raise ConfigError(f"精灵尺寸无效: {self.sprite_width}x{self.sprite_height}")
        if self.sprite_width > self.width or self.sprite_height > self.height:
            raise ConfigError(
                f"精灵 {self.sprite_width}x{self.sprite_height} 大于画面 {self.width}x{self.height}"
            )
        if not (0 <= self.origin_x <= self.width - self.sprite_width
                and 0 <= self.origin_y <= self.height - self.sprite_height):
            raise ConfigError(f"精灵起点 ({self.origin_x}, {self.origin_y}) 超出画面")
        for name in ("intensity", "background"):
            if not 0 <= getattr(self, name) <= 255:
                raise ConfigError(f"{name} 必须在 [0, 255] 内: {getattr(self, name)}")
        if self.rings < 0 or self.ring_width < 1:
            raise ConfigError(f"rings / ring_width 无效: {self.rings}, {self.ring_width}")
        if self.noise < 0:
            raise ConfigError(f"noise 不能为负: {self.noise}")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError(f"seed 必须是 u64: {self.seed}")
        return self


# ---------------------------------------------------------------- 噪声


def splitmix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 混合函数，uint64 回绕运算"""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def counter_noise(seed: int, frame_index: int, shape: Tuple[int, int], amplitude: int) -> np.ndarray:
    """计数器式噪声：第 frame_index 帧第 p 个像素取 mix(key ^ mix(frame << 32 | p))，映射到 [-a, a]"""
    if amplitude <= 0:
        return np.zeros(shape, dtype=np.int16)
    count = shape[0] * shape[1]
    key = splitmix64(np.array([seed & MASK64], dtype=np.uint64))[0]
    counters = (np.uint64(frame_index) << np.uint64(32)) | np.arange(count, dtype=np.uint64)
    z = splitmix64(splitmix64(counters) ^ key)
    span = np.uint64(2 * amplitude + 1)
    return ((z % span).astype(np.int64) - amplitude).astype(np.int16).reshape(shape)


# ---------------------------------------------------------------- 生成


def sprite_positions(spec: ClipSpec) -> List[Tuple[int, int]]:
    """每帧精灵左上角；第 0 帧在起点，之后每帧加上所在事件的速度，并夹在画面内"""
    max_x = spec.width - spec.sprite_width
    max_y = spec.height - spec.sprite_height
    x, y = spec.origin_x, spec.origin_y
    positions = []
    index = 0
    for duration, vx, vy in spec.events:
        for _ in range(duration):
            if index > 0:
                x = min(max(x + vx, 0), max_x)
                y = min(max(y + vy, 0), max_y)
            positions.append((x, y))
            index += 1
    return positions


def sprite_pattern(spec: ClipSpec, intensity: int) -> np.ndarray:
    """精灵的亮度图：rings > 0 时由边缘向中心分圈逐级接近 intensity"""
    h, w = spec.sprite_height, spec.sprite_width
    if spec.rings == 0:
        return np.full((h, w), intensity, dtype=np.int32)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    edge = np.minimum(np.minimum(ys, h - 1 - ys), np.minimum(xs, w - 1 - xs))
    level = np.minimum(spec.rings, edge // spec.ring_width + 1)
    return spec.background + (intensity - spec.background) * level // spec.rings


def render_frame(spec: ClipSpec, index: int, position: Tuple[int, int]) -> np.ndarray:
    plane = np.full((spec.height, spec.width), spec.background, dtype=np.int32)
    intensity = min(255, spec.intensity + spec.flicker * (index % 2))
    x, y = position
    plane[y : y + spec.sprite_height, x : x + spec.sprite_width] = sprite_pattern(spec, intensity)
    if spec.noise:
        plane += counter_noise(spec.seed, index, plane.shape, spec.noise)
    return np.clip(plane, 0, 255).astype(np.uint8)


def generate(spec: ClipSpec) -> List[Frame]:
    """按 ClipSpec 生成帧序列；同一 spec 总是得到相同的帧"""
    spec.validate()
    frames = [
        Frame.from_array(render_frame(spec, i, pos))
        for i, pos in enumerate(sprite_positions(spec))
    ]
    logger.info(
        "合成片段: %dx%d, %d 帧, %d 个事件, seed=%d",
        spec.width,
        spec.height,
        len(frames),
        len(spec.events),
        spec.seed,
    )
    return frames


def write_clip_pgms(frames: List[Frame], out_dir, prefix: str = "frame") -> List[Path]:
    """写成 <prefix>_0000.pgm 序列"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = out / f"{prefix}_{i:04d}.pgm"
        write_pgm(path, frame.pixels)
        paths.append(path)
    return paths


# ---------------------------------------------------------------- 文本格式

_INT_KEYS = {f.name for f in fields(ClipSpec)} - {"events"}


def parse_clip_spec(text: str, source: str = "<spec>") -> ClipSpec:
    values = {}
    events: List[Event] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{line_no}: 缺少 '=': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "event":
                duration, vx, vy = (int(v) for v in value.split())
                events.append((duration, vx, vy))
            elif key in _INT_KEYS:
                values[key] = int(value, 0)
            else:
                raise FormatError(f"{source}:{line_no}: 未知的键 {key!r}")
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{source}:{line_no}: 数值无效: {raw!r}") from None
    if events:
        values["events"] = tuple(events)
    return ClipSpec(**values)


def dump_clip_spec(spec: ClipSpec) -> str:
    lines = [f"{f.name} = {getattr(spec, f.name)}" for f in fields(spec) if f.name != "events"]
    lines += [f"event = {d} {vx} {vy}" for d, vx, vy in spec.events]
    return "\n".join(lines) + "\n"


def load_clip_spec(path, seed=None) -> ClipSpec:
    """读取 ClipSpec 文件；给出 seed 时覆盖文件里的值"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"无法读取片段描述 {path}: {e}") from e
    spec = parse_clip_spec(text, str(path))
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec.validate()
