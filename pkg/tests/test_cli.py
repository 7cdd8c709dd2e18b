"""
测试命令行入口 main.main()
"""

import csv

import numpy as np
import pytest

from errors import EXIT_INPUT, EXIT_OK, EXIT_USAGE
from features import FEATURE_DIM, FeatureRow, read_features_csv, write_features_csv
from main import build_parser, main


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.fixture(scope="module")
def static_chain(fixtures_dir, tmp_path_factory):
    """synth -> encode 静止场景，返回 (工作目录, .crv 路径)"""
    work = tmp_path_factory.mktemp("static")
    frames = work / "frames"
    assert main(["synth", "--spec", str(fixtures_dir / "static.spec"), "--out-dir", str(frames)]) == EXIT_OK
    crv = work / "static.crv"
    assert main(["encode", "--input", str(frames / "*.pgm"), "--output", str(crv), "--search-range", "1"]) == EXIT_OK
    return work, crv


@pytest.mark.unit
class TestParser:
    """测试参数解析"""

    def test_defaults(self):
        args = build_parser().parse_args(["accumulate", "--input", "x.crv"])
        assert (args.window_size, args.sim_c, args.qscale, args.gop, args.search_range) == (10, 1.0, 8, 250, 7)
        assert (args.partitions, args.k, args.cut_on_iframe, args.trace) == (8, 3, True, False)

    @pytest.mark.parametrize("text,expected", [("false", False), ("0", False), ("yes", True), ("True", True)])
    def test_cut_on_iframe_bool(self, text, expected):
        args = build_parser().parse_args(["accumulate", "--input", "x.crv", f"--cut-on-iframe={text}"])
        assert args.cut_on_iframe is expected

    def test_invalid_bool(self):
        with pytest.raises(SystemExit) as info:
            main(["accumulate", "--input", "x.crv", "--cut-on-iframe=maybe"])
        assert info.value.code == EXIT_USAGE

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["encode", "--input", "a", "--output", "b", "--colour"])
        assert info.value.code == EXIT_USAGE

    def test_sweep(self):
        args = build_parser().parse_args(["evaluate", "--manifest", "m.csv", "--sweep", "10,30,50"])
        assert args.sweep == [10, 30, 50]


@pytest.mark.integration
class TestStaticChain:
    """测试 synth -> encode -> residuals -> accumulate -> featurize 串联"""

    def test_synth_frames(self, static_chain):
        work, _ = static_chain
        assert len(list((work / "frames").glob("frame_*.pgm"))) == 20

    def test_stream_header(self, static_chain):
        _, crv = static_chain
        data = crv.read_bytes()
        assert data[:4] == b"CRV1"
        assert not list(crv.parent.glob("*.tmp"))

    def test_residuals(self, static_chain, tmp_path):
        _, crv = static_chain
        assert main(["residuals", "--input", str(crv), "--out-dir", str(tmp_path), "--pgm"]) == EXIT_OK
        rows = read_rows(tmp_path / "residuals.csv")
        assert rows[0] == ["frame_index", "kind", "min", "max", "mean_abs", "energy"]
        assert len(rows) == 21
        assert rows[1][1] == "I"
        # 静止场景的 P 帧残差为 0
        assert all(r[-1] == "0" for r in rows[2:])
        assert len(list(tmp_path.glob("residual_*.pgm"))) == 20

    def test_accumulate_single_group(self, static_chain, tmp_path):
        _, crv = static_chain
        argv = ["accumulate", "--input", str(crv), "--out-dir", str(tmp_path), "--trace", "--pgm", "--window-size", "4"]
        assert main(argv) == EXIT_OK
        stats = read_rows(tmp_path / "stats.csv")
        assert stats[1] == ["19", "1", "0.947368"]
        assert stats[4] == ["19", "1"]
        assert [p.name for p in tmp_path.glob("acc_*.pgm")] == ["acc_0000_000001-000019.pgm"]
        trace = read_rows(tmp_path / "trace.csv")
        assert trace[0] == ["frame_index", "kind", "similarity", "window_mean", "decision", "group_id"]
        assert trace[1][4] == "iframe"
        assert trace[-1][4] == "flush"

    def test_accumulate_without_iframe_cut(self, static_chain, tmp_path):
        _, crv = static_chain
        argv = ["accumulate", "--input", str(crv), "--out-dir", str(tmp_path), "--cut-on-iframe=false"]
        assert main(argv) == EXIT_OK
        assert read_rows(tmp_path / "stats.csv")[1][:2] == ["20", "1"]

    def test_featurize_from_stream(self, static_chain, tmp_path):
        _, crv = static_chain
        out = tmp_path / "features.csv"
        assert main(["featurize", "--input", str(crv), "--output", str(out)]) == EXIT_OK
        rows = read_features_csv(out)
        assert len(rows) == 1
        assert (rows[0].first_index, rows[0].last_index) == (1, 19)
        assert len(rows[0].values) == FEATURE_DIM

    def test_featurize_from_pgm_dir(self, static_chain, tmp_path):
        _, crv = static_chain
        acc_dir = tmp_path / "acc"
        assert main(["accumulate", "--input", str(crv), "--out-dir", str(acc_dir), "--pgm"]) == EXIT_OK
        out = tmp_path / "features.csv"
        assert main(["featurize", "--input", str(acc_dir), "--output", str(out)]) == EXIT_OK
        rows = read_features_csv(out)
        assert [(r.group_id, r.first_index, r.last_index) for r in rows] == [(0, 1, 19)]


@pytest.mark.integration
class TestTrainPredict:
    """测试 train / predict 子命令"""

    @staticmethod
    def write_clip(path, rng, offset, rows=10):
        feature_rows = [FeatureRow(i, i, i, rng.random(FEATURE_DIM) + offset) for i in range(rows)]
        write_features_csv(feature_rows, path)

    def test_train_then_predict(self, tmp_path, rng):
        lines = ["features,label"]
        for i in range(3):
            self.write_clip(tmp_path / f"calm_{i}.csv", rng, 0.0)
            self.write_clip(tmp_path / f"busy_{i}.csv", rng, 5.0)
            lines += [f"calm_{i}.csv,calm", f"busy_{i}.csv,busy"]
        (tmp_path / "train.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        model = tmp_path / "m.model"
        assert main(["train", "--manifest", str(tmp_path / "train.csv"), "--output", str(model)]) == EXIT_OK
        assert model.read_text(encoding="utf-8").startswith("RESACC-MODEL v1 dim=144 k=3")

        self.write_clip(tmp_path / "query.csv", rng, 5.0, rows=13)
        out = tmp_path / "pred"
        argv = ["predict", "--features", str(tmp_path / "query.csv"), "--model", str(model), "--out-dir", str(out)]
        assert main(argv) == EXIT_OK
        rows = read_rows(out / "decisions.csv")
        assert rows[0] == ["partition", "label", "score"]
        assert len(rows) == 1 + 8 + 1
        assert rows[-1][:2] == ["vote", "busy"]
        assert all(r[1] == "busy" for r in rows[1:9])

    def test_train_bad_manifest(self, tmp_path):
        (tmp_path / "train.csv").write_text("path,class\nx.csv,a\n", encoding="utf-8")
        code = main(["train", "--manifest", str(tmp_path / "train.csv"), "--output", str(tmp_path / "m")])
        assert code == EXIT_INPUT


@pytest.mark.integration
class TestExitCodes:
    """测试错误到退出码的映射"""

    def test_missing_input(self, tmp_path):
        code = main(["residuals", "--input", str(tmp_path / "none.crv"), "--out-dir", str(tmp_path)])
        assert code == EXIT_INPUT

    def test_no_frames(self, tmp_path):
        code = main(["encode", "--input", str(tmp_path / "*.pgm"), "--output", str(tmp_path / "x.crv")])
        assert code == EXIT_INPUT
        assert not (tmp_path / "x.crv").exists()

    def test_invalid_window(self, static_chain, tmp_path):
        _, crv = static_chain
        code = main(["accumulate", "--input", str(crv), "--out-dir", str(tmp_path), "--window-size", "0"])
        assert code == EXIT_USAGE

    def test_missing_out_dir(self, static_chain):
        _, crv = static_chain
        assert main(["accumulate", "--input", str(crv)]) == EXIT_USAGE

    def test_corrupted_stream(self, static_chain, tmp_path):
        _, crv = static_chain
        bad = tmp_path / "bad.crv"
        bad.write_bytes(crv.read_bytes()[:-7])
        code = main(["accumulate", "--input", str(bad), "--out-dir", str(tmp_path / "out")])
        assert code == EXIT_INPUT
        assert not (tmp_path / "out" / "stats.csv").exists()

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "bad.crv"
        bad.write_bytes(b"XRV1" + bytes(14))
        assert main(["residuals", "--input", str(bad), "--out-dir", str(tmp_path)]) == EXIT_INPUT

    def test_invalid_qscale(self, tmp_path):
        code = main(["encode", "--input", "x", "--output", str(tmp_path / "x.crv"), "--qscale", "0"])
        assert code == EXIT_USAGE


@pytest.mark.slow
@pytest.mark.integration
class TestEvaluateCommand:
    """测试 evaluate 子命令"""

    def test_evaluate_subset(self, fixtures_dir, tmp_path, capsys):
        manifest = tmp_path / "m.csv"
        lines = ["clip_id,spec,label,split"]
        for clip, label, split in [
            ("horizontal_0", "horizontal", "train"),
            ("horizontal_5", "horizontal", "test"),
            ("flicker_0", "flicker", "train"),
            ("flicker_5", "flicker", "test"),
        ]:
            lines.append(f"{clip},{fixtures_dir / 'action' / (clip + '.spec')},{label},{split}")
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = tmp_path / "eval"
        argv = ["evaluate", "--manifest", str(manifest), "--out-dir", str(out), "--search-range", "0",
                "--sweep", "4,10", "--trace"]
        assert main(argv) == EXIT_OK
        summary = read_rows(out / "summary.csv")
        assert [r[0] for r in summary[1:]] == ["noacc", "ws4", "ws10"]
        assert len(list((out / "traces").glob("*.csv"))) == 8
        assert "ws10" in capsys.readouterr().out


@pytest.mark.integration
class TestPartialOutputs:
    """码流中途损坏时不留下半套输出"""

    @pytest.fixture
    def truncated(self, three_event_stream, tmp_path):
        path = tmp_path / "cut.crv"
        path.write_bytes(three_event_stream[: len(three_event_stream) * 9 // 10])
        return path

    def test_accumulate_pgm(self, truncated, tmp_path):
        out = tmp_path / "acc"
        argv = ["accumulate", "--input", str(truncated), "--out-dir", str(out),
                "--pgm", "--trace", "--window-size", "4"]
        assert main(argv) == EXIT_INPUT
        assert list(out.iterdir()) == []

    def test_residuals_pgm(self, truncated, tmp_path):
        out = tmp_path / "res"
        argv = ["residuals", "--input", str(truncated), "--out-dir", str(out), "--pgm"]
        assert main(argv) == EXIT_INPUT
        assert list(out.iterdir()) == []

    def test_complete_stream_keeps_groups(self, three_event_stream, tmp_path):
        crv = tmp_path / "full.crv"
        crv.write_bytes(three_event_stream)
        out = tmp_path / "acc"
        argv = ["accumulate", "--input", str(crv), "--out-dir", str(out), "--pgm", "--window-size", "4"]
        assert main(argv) == EXIT_OK
        names = sorted(p.name for p in out.glob("acc_*.pgm"))
        assert names == [
            "acc_0000_000001-000011.pgm",
            "acc_0001_000012-000023.pgm",
            "acc_0002_000024-000035.pgm",
        ]
        assert not list(out.glob("*.tmp"))
