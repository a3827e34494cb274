import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worldmem.core import io as wio
from worldmem.core.io import FormatError
from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Image, PointCloud

from conftest import random_pose


# -- PLY


def test_empty_cloud_round_trip():
    data = wio.encode_ply(PointCloud())
    assert b"element vertex 0\n" in data
    assert len(wio.decode_ply(data)) == 0


def test_single_point_byte_exact():
    cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 0.0, 0.0]]), np.array([5.0]))
    data = wio.encode_ply(cloud)
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        b"property float x\nproperty float y\nproperty float z\n"
        b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
        b"property float confidence\nend_header\n"
    )
    assert data == header + struct.pack("<fffBBBf", 1.0, 2.0, 3.0, 255, 0, 0, 5.0)
    back = wio.decode_ply(data)
    assert wio.encode_ply(back) == data
    np.testing.assert_array_equal(back.positions, [[1, 2, 3]])
    np.testing.assert_array_equal(back.colors, [[1, 0, 0]])
    np.testing.assert_array_equal(back.confidences, [5])


def test_random_cloud_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    n = 10_000
    cloud = PointCloud(rng.normal(0, 10, (n, 3)), rng.integers(0, 256, (n, 3)) / 255.0, rng.uniform(0, 100, n))
    path = tmp_path / "c.ply"
    wio.write_ply(path, cloud)
    back = wio.read_ply(path)
    np.testing.assert_array_equal(back.positions, cloud.positions.astype(np.float32))
    np.testing.assert_allclose(back.colors, cloud.colors, atol=1e-12)
    np.testing.assert_array_equal(back.confidences, cloud.confidences.astype(np.float32))


def test_ply_quantises_colours_half_up():
    cloud = PointCloud(np.zeros((2, 3)), np.array([[0.5 / 255, 0.0, 1.0], [0.49 / 255, 0.2, 0.0]]), np.ones(2))
    back = wio.decode_ply(wio.encode_ply(cloud))
    np.testing.assert_array_equal(np.round(back.colors[:, 0] * 255), [1, 0])


def _one_point():
    return wio.encode_ply(PointCloud(np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1)))


def test_ply_bad_magic():
    with pytest.raises(FormatError, match="byte 0"):
        wio.decode_ply(b"plx\n" + _one_point()[4:])


def test_ply_truncated_names_offset():
    data = _one_point()[:-3]
    with pytest.raises(FormatError, match="truncated at byte"):
        wio.decode_ply(data)


def test_ply_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        wio.decode_ply(_one_point() + b"\x00")


def test_ply_wrong_property_layout():
    data = _one_point().replace(b"property float confidence", b"property float quality__")
    with pytest.raises(FormatError, match="properties"):
        wio.decode_ply(data)


def test_ply_ascii_rejected():
    data = _one_point().replace(b"binary_little_endian", b"ascii")
    with pytest.raises(FormatError, match="format"):
        wio.decode_ply(data)


def test_ply_nonfinite_rejected():
    data = bytearray(_one_point())
    body = data.index(b"end_header\n") + len(b"end_header\n")
    data[body : body + 4] = struct.pack("<f", float("nan"))
    with pytest.raises(FormatError, match=f"byte {body}"):
        wio.decode_ply(bytes(data))


# -- PPM


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_ppm_round_trip_lossless_at_8_bit(w, h, seed):
    q = np.random.default_rng(seed).integers(0, 256, (h, w, 3)).astype(np.uint8)
    np.testing.assert_array_equal(wio.decode_ppm(wio.encode_ppm(q)), q)
    img = Image(q / 255.0)
    np.testing.assert_array_equal(wio.decode_ppm(wio.encode_ppm(img.pixels)), q)


def test_ppm_header_comment_allowed():
    data = b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3])
    np.testing.assert_array_equal(wio.decode_ppm(data), [[[1, 2, 3]]])


@pytest.mark.parametrize(
    "data, msg",
    [
        (b"P5\n1 1\n255\n\x00", "magic"),
        (b"P6\n1 1\n65535\n\x00\x00\x00", "maxval"),
        (b"P6\n2 1\n255\n\x00\x00\x00", "truncated"),
        (b"P6\n0 1\n255\n", "width"),
        (b"P6\n1 1\n255\n\x00\x00\x00\x00", "trailing"),
    ],
)
def test_ppm_errors(data, msg):
    with pytest.raises(FormatError, match=msg):
        wio.decode_ppm(data)


def test_mask_round_trip(tmp_path):
    m = np.random.default_rng(1).random((7, 9)) > 0.5
    wio.write_mask(tmp_path / "m.ppm", m)
    np.testing.assert_array_equal(wio.read_mask(tmp_path / "m.ppm"), m)
    raw = wio.decode_ppm((tmp_path / "m.ppm").read_bytes())
    assert set(np.unique(raw)) <= {0, 255}


# -- PFM


def test_pfm_round_trip_and_layout():
    d = np.arange(6, dtype=np.float32).reshape(2, 3)
    data = wio.encode_pfm(d)
    assert data.startswith(b"Pf\n3 2\n-1.0\n")
    body = np.frombuffer(data[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4").reshape(2, 3)
    # bottom row first
    np.testing.assert_array_equal(body, d[::-1])
    np.testing.assert_array_equal(wio.decode_pfm(data), d)


def test_pfm_big_endian_read():
    d = np.array([[1.5, -2.0]], dtype=np.float32)
    data = b"Pf\n2 1\n1.0\n" + d.astype(">f4").tobytes()
    np.testing.assert_array_equal(wio.decode_pfm(data), d)


def test_depth_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    d = rng.uniform(0.1, 9, (5, 4))
    d[0, 0] = 0.0
    wio.write_depth(tmp_path / "d.pfm", DepthMap(d))
    back = wio.read_depth(tmp_path / "d.pfm")
    np.testing.assert_array_equal(back.depths, d.astype(np.float32))
    np.testing.assert_array_equal(back.valid, d > 0)


@pytest.mark.parametrize(
    "data, msg",
    [
        (b"PF\n1 1\n-1.0\n" + bytes(12), "colour"),
        (b"Pg\n1 1\n-1.0\n" + bytes(4), "magic"),
        (b"Pf\n1 1\n0\n" + bytes(4), "scale"),
        (b"Pf\n2 2\n-1.0\n" + bytes(4), "truncated"),
    ],
)
def test_pfm_errors(data, msg):
    with pytest.raises(FormatError, match=msg):
        wio.decode_pfm(data)


# -- JSON


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    poses = [random_pose(rng) for _ in range(5)]
    wio.write_trajectory(tmp_path / "t.json", poses, start_index=10)
    items = json.loads((tmp_path / "t.json").read_text())
    assert [it["index"] for it in items] == list(range(10, 15))
    assert len(items[0]["rotation"]) == 9 and len(items[0]["translation"]) == 3
    back = wio.read_trajectory(tmp_path / "t.json")
    assert back == poses


def test_pose_rotation_is_row_major():
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    d = wio.pose_to_dict(CameraPose(R, (0, 0, 0)), 0)
    assert d["rotation"] == [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]


@pytest.mark.parametrize(
    "item, field",
    [
        ({"index": 0, "rotation": [1, 0, 0], "translation": [0, 0, 0]}, "rotation"),
        ({"index": 0, "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0]}, "translation"),
        ({"index": "a", "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 0]}, "index"),
        ({"index": 0, "rotation": [2, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 0]}, "rotation"),
    ],
)
def test_trajectory_errors_name_field(item, field):
    with pytest.raises(FormatError, match=rf"trajectory\[0\]\.{field}"):
        wio.load_trajectory([item])


def test_intrinsics_round_trip(tmp_path):
    k = CameraIntrinsics(100.0, 90.0, 31.5, 23.5, 64, 48)
    wio.write_intrinsics(tmp_path / "k.json", k)
    assert set(json.loads((tmp_path / "k.json").read_text())) == {"fx", "fy", "cx", "cy", "width", "height"}
    assert wio.read_intrinsics(tmp_path / "k.json") == k


def test_invalid_json_reports_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"a": 1,,}')
    with pytest.raises(FormatError, match="byte 8"):
        wio.read_json(p)


def test_write_json_is_canonical(tmp_path):
    wio.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
