import math

import numpy as np
import pytest

from voxterrain.grid import GridSpec
from voxterrain.integrate import Pose, ScanFrame
from voxterrain.io import (
    FormatError,
    PipelineConfig,
    SequenceDataset,
    deserialize_layer,
    format_config,
    parse_config,
    read_frame,
    read_poses,
    serialize_layer,
    write_dataset,
    write_frame,
    write_poses,
)
from voxterrain.layers import LayerGrid, LayerParams


class TestFrames:
    def test_round_trip(self, tmp_path):
        pts = np.random.default_rng(0).normal(0, 30, (1000, 3)).astype(np.float32)
        write_frame(tmp_path / "a.gvpc", pts)
        assert read_frame(tmp_path / "a.gvpc").tobytes() == pts.tobytes()

    def test_layout(self, tmp_path):
        write_frame(tmp_path / "a.gvpc", [[1.0, 2.0, 3.0]])
        raw = (tmp_path / "a.gvpc").read_bytes()
        assert raw[:5] == b"GVPC1"
        assert raw[5:9] == (1).to_bytes(4, "little")
        assert len(raw) == 9 + 12

    def test_empty(self, tmp_path):
        write_frame(tmp_path / "a.gvpc", np.zeros((0, 3)))
        assert read_frame(tmp_path / "a.gvpc").shape == (0, 3)

    @pytest.mark.parametrize("payload", [b"GVPC2\x00\x00\x00\x00", b"GVPC1\x02\x00\x00\x00" + b"\x00" * 12, b"GV"])
    def test_malformed(self, tmp_path, payload):
        (tmp_path / "bad.gvpc").write_bytes(payload)
        with pytest.raises(FormatError, match="bad.gvpc"):
            read_frame(tmp_path / "bad.gvpc")


class TestPoses:
    def test_round_trip(self, tmp_path):
        poses = [(0.1 * k, Pose.from_yaw((k, -k, 1.8), 0.3 * k)) for k in range(5)]
        write_poses(tmp_path / "poses.txt", poses)
        back = read_poses(tmp_path / "poses.txt")
        for (t0, p0), (t1, p1) in zip(poses, back):
            assert t0 == t1
            np.testing.assert_allclose(p1.rotation, p0.rotation, atol=1e-12)
            np.testing.assert_array_equal(p1.translation, p0.translation)

    def test_parse_line(self, tmp_path):
        s = math.sin(math.pi / 4)
        (tmp_path / "p.txt").write_text(f"1.5 1 2 3 0 0 {s} {s}\n")
        (t, pose), = read_poses(tmp_path / "p.txt")
        assert t == 1.5
        np.testing.assert_allclose(pose.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    @pytest.mark.parametrize("line", ["0 0 0 0 0 0 0 2", "0 0 0 0 0 0 1", "0 a 0 0 0 0 0 1"])
    def test_bad_lines(self, tmp_path, line):
        (tmp_path / "p.txt").write_text(line + "\n")
        with pytest.raises(FormatError, match=":1"):
            read_poses(tmp_path / "p.txt")


class TestDataset:
    def _frames(self, n):
        return [ScanFrame(np.ones((4, 3)) * k, Pose.from_yaw((k, 0, 0), 0.0), 0.1 * k) for k in range(n)]

    def test_round_trip(self, tmp_path):
        write_dataset(tmp_path, self._frames(3))
        ds = SequenceDataset.open(tmp_path)
        assert len(ds) == 3
        f = ds.frame(2)
        assert f.timestamp == pytest.approx(0.2)
        np.testing.assert_array_equal(f.points, np.full((4, 3), 2.0))

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            SequenceDataset.open(tmp_path / "nope")

    def test_count_mismatch(self, tmp_path):
        write_dataset(tmp_path, self._frames(3))
        (tmp_path / "frame_000002.gvpc").unlink()
        with pytest.raises(FormatError):
            SequenceDataset.open(tmp_path)

    def test_timestamps_must_increase(self, tmp_path):
        frames = self._frames(3)
        frames[2].timestamp = 0.05
        write_dataset(tmp_path, frames)
        with pytest.raises(FormatError, match="increasing"):
            SequenceDataset.open(tmp_path)

    def test_corrupt_frame_names_index(self, tmp_path):
        write_dataset(tmp_path, self._frames(3))
        (tmp_path / "frame_000001.gvpc").write_bytes(b"junk")
        ds = SequenceDataset.open(tmp_path)
        with pytest.raises(FormatError, match="frame 1"):
            ds.frame(1)


class TestLayerFormat:
    def test_round_trip_with_nodata(self, tmp_path):
        rng = np.random.default_rng(1)
        v = rng.normal(0, 10, (256, 256)).astype(np.float32)
        v[rng.random(v.shape) < 0.3] = np.nan
        layer = LayerGrid("slope", v, (-51.2, -40.8), 0.4)
        path = serialize_layer(layer, tmp_path / "slope.gvl")
        back = deserialize_layer(path)
        assert back.values.tobytes() == v.tobytes()
        assert back.name == "slope" and back.origin == (-51.2, -40.8) and back.resolution == 0.4

    def test_size_and_header(self, tmp_path):
        layer = LayerGrid("hard_obstacle", np.zeros((256, 256)), (0.0, 0.0), 0.4)
        path = serialize_layer(layer, tmp_path / "h.gvl")
        raw = path.read_bytes()
        header, _, body = raw.partition(b"\n\n")
        assert len(body) == 256 * 256 * 4
        lines = header.decode().split("\n")
        assert lines[0] == "GVOM-LAYER v1"
        assert "nodata nan" in lines

    def test_x_varies_fastest(self, tmp_path):
        v = np.arange(6, dtype=np.float32).reshape(3, 2)  # width 3, height 2
        path = serialize_layer(LayerGrid("t", v, (0.0, 0.0), 1.0), tmp_path / "t.gvl")
        body = path.read_bytes().partition(b"\n\n")[2]
        assert np.frombuffer(body, "<f4").tolist() == [0, 2, 4, 1, 3, 5]

    def test_truncated(self, tmp_path):
        path = serialize_layer(LayerGrid("t", np.zeros((4, 4)), (0.0, 0.0), 1.0), tmp_path / "t.gvl")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            deserialize_layer(path)

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            serialize_layer(LayerGrid("t", np.zeros((2, 2)), (0.0, 0.0), 1.0), tmp_path / "missing" / "t.gvl")


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.grid == GridSpec()
        assert cfg.layers == LayerParams()
        assert cfg.buffer_capacity == 8

    def test_overrides(self):
        cfg = parse_config("dims_x = 128\nresolution = 0.2  # finer\nneg_obs_threshold = 0.8\nworkers = 4\n")
        assert cfg.grid.dims == (128, 256, 64)
        assert cfg.grid.resolution == 0.2
        assert cfg.layers.neg_obs_threshold == 0.8
        assert cfg.workers == 4

    def test_round_trip(self):
        cfg = PipelineConfig(buffer_capacity=3, workers=2, output_dir="out")
        assert parse_config(format_config(cfg)) == cfg

    @pytest.mark.parametrize("text", ["bogus = 1", "resolution", "slope_window = 4", "dims_x = abc"])
    def test_errors(self, text):
        with pytest.raises(ValueError):
            parse_config(text)
