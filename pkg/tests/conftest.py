"""
Pytest 配置文件
"""

import pytest
import sys
import os
from pathlib import Path

import numpy as np

# 确保项目根目录在路径中
ROOT = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))
sys.path.insert(0, ROOT)

FIXTURES = Path(ROOT) / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    """提供 fixtures 目录"""
    return FIXTURES


@pytest.fixture(scope="session")
def three_event_spec():
    """三段运动片段的描述"""
    from synthgen import load_clip_spec

    return load_clip_spec(FIXTURES / "three_events.spec")


@pytest.fixture(scope="session")
def three_event_stream(three_event_spec):
    """三段运动片段，search_range 0 编码后的码流"""
    from codec import encode
    from config import EncoderConfig
    from synthgen import generate

    return encode(generate(three_event_spec), EncoderConfig(qscale=8, search_range=0))


@pytest.fixture(scope="session")
def static_stream():
    """静止场景的码流"""
    from codec import encode
    from config import EncoderConfig
    from synthgen import generate, load_clip_spec

    spec = load_clip_spec(FIXTURES / "static.spec")
    return encode(generate(spec), EncoderConfig(search_range=2))


@pytest.fixture(scope="session")
def moving_clip():
    """20 帧 64x64 的小片段：带噪声的精灵右移"""
    from synthgen import ClipSpec, generate

    spec = ClipSpec(
        width=64,
        height=64,
        events=((10, 2, 0), (10, 0, 1)),
        sprite_width=16,
        sprite_height=16,
        intensity=210,
        origin_x=8,
        origin_y=8,
        background=50,
        noise=3,
        seed=7,
    )
    return generate(spec)


@pytest.fixture
def rng():
    """固定种子的随机数发生器"""
    return np.random.default_rng(20240611)


def make_residual(values, index=0, kind=None):
    """测试用：从数组构造 ResidualFrame"""
    from codec import FrameKind
    from partial_decoder import ResidualFrame

    values = np.asarray(values, dtype=np.int16)
    return ResidualFrame(values.shape[1], values.shape[0], values, index, kind or FrameKind.P)


@pytest.fixture
def residual():
    """提供 make_residual 构造函数"""
    return make_residual
