"""
测试 PGM 读写和原子写文件
"""

import numpy as np
import pytest

from errors import FormatError, InputError
from pgm_io import (
    atomic_path,
    decode_pgm,
    encode_pgm,
    read_pgm,
    residual_to_pgm_plane,
    staged_files,
    write_pgm,
)


@pytest.mark.unit
class TestPgm:
    """测试 P5 读写"""

    def test_write_read(self, tmp_path, rng):
        plane = rng.integers(0, 256, size=(24, 40)).astype(np.uint8)
        write_pgm(tmp_path / "a.pgm", plane)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), plane)

    def test_header_layout(self):
        data = encode_pgm(np.zeros((2, 3), dtype=np.uint8))
        assert data == b"P5\n3 2\n255\n" + bytes(6)

    def test_comments(self):
        data = "P5\n# 注释\n3 # 宽\n2\n255\n".encode("utf-8") + bytes(range(6))
        assert decode_pgm(data).tolist() == [[0, 1, 2], [3, 4, 5]]

    @pytest.mark.parametrize(
        "data",
        [
            b"P2\n2 2\n255\n0000",
            b"P5\n2 2\n65535\n" + bytes(8),
            b"P5\n2 2\n255\n" + bytes(3),
            b"P5\n2 x\n255\n" + bytes(4),
            b"P5\n2 2\n",
            b"P5\n0 2\n255\n",
        ],
    )
    def test_invalid(self, data):
        with pytest.raises(FormatError):
            decode_pgm(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_pgm(tmp_path / "none.pgm")

    def test_not_a_plane(self):
        with pytest.raises(FormatError):
            encode_pgm(np.zeros(5))


@pytest.mark.unit
class TestAtomicPath:
    """测试原子写文件"""

    def test_success_renames(self, tmp_path):
        with atomic_path(tmp_path / "out.csv") as tmp:
            assert tmp.name == "out.csv.tmp"
            tmp.write_text("ok")
        assert (tmp_path / "out.csv").read_text() == "ok"
        assert not (tmp_path / "out.csv.tmp").exists()

    def test_failure_removes_tmp(self, tmp_path):
        with pytest.raises(RuntimeError):
            with atomic_path(tmp_path / "out.csv") as tmp:
                tmp.write_text("partial")
                raise RuntimeError("boom")
        assert not (tmp_path / "out.csv").exists()
        assert not (tmp_path / "out.csv.tmp").exists()

    def test_staged_commit(self, tmp_path):
        with staged_files(tmp_path) as staged:
            for i in range(3):
                tmp = staged.path(f"f{i}.pgm")
                assert tmp.name == f"f{i}.pgm.tmp"
                write_pgm(tmp, np.full((2, 2), i, dtype=np.uint8))
            assert not list(tmp_path.glob("*.pgm"))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["f0.pgm", "f1.pgm", "f2.pgm"]
        assert read_pgm(tmp_path / "f2.pgm").tolist() == [[2, 2], [2, 2]]

    def test_staged_discard(self, tmp_path):
        """中途出错时整批都不落盘"""
        with pytest.raises(InputError):
            with staged_files(tmp_path) as staged:
                write_pgm(staged.path("a.pgm"), np.zeros((2, 2), dtype=np.uint8))
                staged.path("never_written.pgm")
                raise InputError("断流")
        assert list(tmp_path.iterdir()) == []


@pytest.mark.unit
class TestResidualPlane:
    """测试残差到 8 位灰度的映射"""

    def test_mapping(self):
        values = np.array([[-255, 0, 255, -1000, 1000]])
        assert residual_to_pgm_plane(values).tolist() == [[0, 127, 255, 0, 255]]
