import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spheremap.errors import ParseError, StructuralError
from spheremap.geom import PointCloud, Pose
from spheremap.io import (
    ImuRecord,
    LidarRecord,
    TruthRecord,
    read_log,
    read_ply,
    read_trajectory,
    read_xyz,
    write_log,
    write_ply,
    write_trajectory,
    write_xyz,
)


def rgb_cloud(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(
        points=rng.uniform(-5, 5, size=(n, 3)).astype(np.float32).astype(float),
        intensities=rng.uniform(0, 1, n).astype(np.float32).astype(float),
        time_offsets=np.sort(rng.uniform(0, 0.1, n)).astype(np.float32).astype(float),
        colors=rng.integers(0, 256, size=(n, 3)),
    )


class TestPly:
    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "e.ply"
        write_ply(PointCloud(points=np.empty((0, 3))), path)
        back = read_ply(path)
        assert len(back) == 0

    def test_binary_roundtrip_bit_exact(self, tmp_path):
        c = rgb_cloud()
        path = tmp_path / "c.ply"
        write_ply(c, path, mode="binary_le")
        back = read_ply(path)
        assert np.array_equal(back.points, c.points)  # float32-representable input
        assert np.array_equal(back.colors, c.colors)
        assert np.array_equal(back.intensities, c.intensities)
        assert np.array_equal(back.time_offsets, c.time_offsets)

    def test_ascii_binary_agree(self, tmp_path):
        c = rgb_cloud(n=17, seed=1)
        pa, pb = tmp_path / "a.ply", tmp_path / "b.ply"
        write_ply(c, pa, mode="ascii")
        write_ply(c, pb, mode="binary_le")
        a = read_ply(pa)
        b = read_ply(pb)
        assert np.allclose(a.points, b.points, atol=1e-6)
        assert np.array_equal(a.colors, b.colors)

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "t.ply"
        header = "ply\nformat binary_little_endian 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
        path.write_bytes(header.encode() + b"\x00" * (12 * 5))
        with pytest.raises(ParseError) as ei:
            read_ply(path)
        assert "truncated" in str(ei.value)

    def test_unknown_property_skipped(self, tmp_path):
        path = tmp_path / "n.ply"
        header = (
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\nproperty float nx\n"
            "end_header\n"
        )
        path.write_text(header + "1 2 3 9\n4 5 6 9\n")
        back = read_ply(path)
        assert np.allclose(back.points, [[1, 2, 3], [4, 5, 6]])

    def test_big_endian_rejected(self, tmp_path):
        path = tmp_path / "be.ply"
        path.write_text("ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n")
        with pytest.raises(ParseError) as ei:
            read_ply(path)
        assert "big-endian" in str(ei.value)

    def test_not_ply(self, tmp_path):
        path = tmp_path / "no.ply"
        path.write_bytes(b"hello world")
        with pytest.raises(ParseError):
            read_ply(path)

    @given(n=st.integers(0, 40), seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_roundtrip_property(self, tmp_path_factory, n, seed):
        rng = np.random.default_rng(seed)
        c = PointCloud(points=rng.uniform(-100, 100, size=(n, 3)))
        path = tmp_path_factory.mktemp("ply") / "r.ply"
        write_ply(c, path, mode="binary_le")
        back = read_ply(path)
        assert np.allclose(back.points, c.points, rtol=1e-6, atol=1e-4)


class TestXyz:
    def test_basic(self, tmp_path):
        path = tmp_path / "a.xyz"
        path.write_text("0 0 0\n1 2 3\n")
        c = read_xyz(path)
        assert len(c) == 2
        assert np.allclose(c.points[1], [1, 2, 3])

    def test_comments_only(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# comment\n\n# another\n")
        assert len(read_xyz(path)) == 0

    def test_roundtrip_9_digits(self, tmp_path):
        rng = np.random.default_rng(2)
        c = PointCloud(points=rng.uniform(-10, 10, size=(50, 3)))
        path = tmp_path / "r.xyz"
        write_xyz(c, path)
        back = read_xyz(path)
        assert np.allclose(back.points, c.points, rtol=1e-8, atol=1e-8)

    def test_bad_token_line_number(self, tmp_path):
        path = tmp_path / "b.xyz"
        path.write_text("0 0 0\n1 2 x\n")
        with pytest.raises(ParseError) as ei:
            read_xyz(path)
        assert ei.value.line == 2


class TestLog:
    def make_records(self):
        return [
            TruthRecord(t=0.0, pose=Pose(t=0.0, q=[1, 0, 0, 0], p=[0, 0, 0.1])),
            ImuRecord(t=0.005, gyro=np.array([0.1, 0.2, 0.3]), accel=np.array([0, 0, 9.81])),
            LidarRecord(t_start=0.01, points=np.array([[1.0, 2.0, 3.0, 0.0], [4.0, 5.0, 6.0, 0.05]])),
            ImuRecord(t=0.015, gyro=np.zeros(3), accel=np.array([0, 0, 9.81])),
        ]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.jsonl"
        path.write_text("")
        records, skipped = read_log(path)
        assert records == [] and skipped == 0

    def test_roundtrip_field_exact(self, tmp_path):
        path = tmp_path / "log.jsonl"
        recs = self.make_records()
        write_log(recs, path)
        back, skipped = read_log(path)
        assert skipped == 0
        assert len(back) == len(recs)
        assert back[1].t == recs[1].t
        assert np.array_equal(back[1].gyro, recs[1].gyro)
        assert np.array_equal(back[2].points, recs[2].points)
        assert np.array_equal(back[0].pose.p, recs[0].pose.p)

    def test_unknown_type_skipped(self, tmp_path):
        path = tmp_path / "u.jsonl"
        path.write_text('{"type": "imu", "t": 0.0, "gyro": [0,0,0], "accel": [0,0,9.81]}\n{"type": "magnetometer", "t": 0.1}\n')
        records, skipped = read_log(path)
        assert len(records) == 1 and skipped == 1

    def test_non_monotone_time(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"type": "imu", "t": 1.0, "gyro": [0,0,0], "accel": [0,0,9.81]}\n'
            '{"type": "imu", "t": 0.5, "gyro": [0,0,0], "accel": [0,0,9.81]}\n'
        )
        with pytest.raises(StructuralError):
            read_log(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "b.jsonl"
        path.write_text('{"type": "imu", "t": }\n')
        with pytest.raises(ParseError) as ei:
            read_log(path)
        assert ei.value.line == 1


class TestTrajectory:
    def test_identity_line(self, tmp_path):
        path = tmp_path / "t.txt"
        write_trajectory([Pose(t=0.0)], path)
        assert path.read_text().strip() == "0 0 0 0 0 0 0 1"

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        poses = []
        for k in range(10):
            q = rng.normal(size=4)
            poses.append(Pose(t=0.1 * k, q=q / np.linalg.norm(q), p=rng.uniform(-5, 5, 3)))
        path = tmp_path / "traj.txt"
        write_trajectory(poses, path)
        back = read_trajectory(path)
        assert len(back) == 10
        for a, b in zip(poses, back):
            assert a.t == pytest.approx(b.t, abs=1e-8)
            assert np.allclose(a.p, b.p, atol=1e-8)
            assert min(np.linalg.norm(a.q - b.q), np.linalg.norm(a.q + b.q)) < 1e-8

    def test_ordering_preserved(self, tmp_path):
        poses = [Pose(t=float(k)) for k in range(5)]
        path = tmp_path / "o.txt"
        write_trajectory(poses, path)
        back = read_trajectory(path)
        assert [p.t for p in back] == [0.0, 1.0, 2.0, 3.0, 4.0]


class TestFuzzMini:
    """Parsers must return structured errors, never crash, on mangled input."""

    def test_mutated_inputs(self, tmp_path):
        rng = np.random.default_rng(4)
        cloud = rgb_cloud(n=5, seed=5)
        base_files = {}
        p = tmp_path / "seed.ply"
        write_ply(cloud, p, mode="binary_le")
        base_files["ply"] = p.read_bytes()
        p = tmp_path / "seed.xyz"
        write_xyz(cloud, p)
        base_files["xyz"] = p.read_bytes()
        p = tmp_path / "seed.jsonl"
        write_log([ImuRecord(t=0.0, gyro=np.zeros(3), accel=np.zeros(3))], p)
        base_files["jsonl"] = p.read_bytes()

        readers = {"ply": read_ply, "xyz": read_xyz, "jsonl": read_log}
        target = tmp_path / "mut"
        for kind, blob in base_files.items():
            for k in range(500):
                data = bytearray(blob)
                for _ in range(rng.integers(1, 8)):
                    op = rng.integers(0, 3)
                    if len(data) == 0:
                        break
                    pos = int(rng.integers(0, len(data)))
                    if op == 0:
                        data[pos] = int(rng.integers(0, 256))
                    elif op == 1:
                        del data[pos]
                    else:
                        data.insert(pos, int(rng.integers(0, 256)))
                target.write_bytes(bytes(data))
                try:
                    readers[kind](target)
                except (ParseError, StructuralError):
                    pass  # structured failure is the contract
