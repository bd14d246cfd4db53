from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tripletdet.errors import ContractError, GridFormatError
from tripletdet.grid import DenseGrid
from tripletdet.io import (
    MAGIC,
    dumps_detections,
    load_detections,
    load_grid,
    load_ground_truth,
    parse_detections,
    save_detections,
    save_grid,
    save_ground_truth,
)
from tripletdet.records import Box, Detection, GroundTruth, LevelSpec, validate_levels


def test_small_grid_round_trip(tmp_path):
    g = DenseGrid.wrap(np.arange(4, dtype=np.float32).reshape(1, 2, 2), "x")
    path = tmp_path / "g.cngrid"
    save_grid(g, path)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC) and len(MAGIC) == 8
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    assert header == {"dtype": "f32le", "name": "x", "shape": [1, 2, 2]}
    assert len(raw) == 12 + hlen + 16
    back = load_grid(path)
    assert back == g
    assert back.values.tolist() == [0.0, 1.0, 2.0, 3.0]


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_is_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("g") / "g.cngrid"
    save_grid(DenseGrid.wrap(arr), path)
    assert load_grid(path).array.tobytes() == arr.tobytes()


def test_nan_rejected_with_index(tmp_path):
    arr = np.zeros((1, 2, 3), dtype=np.float32)
    arr[0, 1, 1] = np.nan
    path = tmp_path / "nan.cngrid"
    save_grid(DenseGrid.wrap(arr), path)
    with pytest.raises(GridFormatError, match="non-finite value at index 4"):
        load_grid(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.cngrid"
    save_grid(DenseGrid.zeros(2, 3, 3), path)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(GridFormatError, match="size mismatch"):
        load_grid(path)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda raw: b"XXGRID1\n" + raw[8:], "magic"),
        (lambda raw: raw[:10], "header length"),
        (lambda raw: raw[:14], "header truncated"),
    ],
)
def test_malformed_container(tmp_path, mutate, message):
    path = tmp_path / "m.cngrid"
    save_grid(DenseGrid.zeros(1, 2, 2), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(GridFormatError, match=message):
        load_grid(path)


def _with_header(header: dict, payload: bytes = b"") -> bytes:
    h = json.dumps(header).encode()
    return MAGIC + struct.pack("<I", len(h)) + h + payload


def test_bad_dtype_and_shape(tmp_path):
    path = tmp_path / "h.cngrid"
    path.write_bytes(_with_header({"dtype": "f64le", "shape": [1, 1, 1], "name": ""}))
    with pytest.raises(GridFormatError, match="dtype"):
        load_grid(path)
    path.write_bytes(_with_header({"dtype": "f32le", "shape": [1, -1, 1], "name": ""}))
    with pytest.raises(GridFormatError, match="shape"):
        load_grid(path)


def test_grid_indexing_and_bounds():
    g = DenseGrid.zeros(2, 3, 4)
    g.set(1, 2, 3, 7.5)
    assert g.get(1, 2, 3) == 7.5
    # flat row-major index (c*H + i)*W + j
    assert g.values[(1 * 3 + 2) * 4 + 3] == 7.5
    for bad in [(2, 0, 0), (0, 3, 0), (0, 0, 4), (-1, 0, 0)]:
        with pytest.raises(IndexError):
            g.get(*bad)
    g.freeze()
    with pytest.raises(ContractError):
        g.set(0, 0, 0, 1.0)


def test_detection_json_uses_xywh(tmp_path):
    det = Detection(1, 3, Box(10, 10, 40, 60), 0.5)
    entry = json.loads(dumps_detections([det]))[0]
    assert entry["bbox"] == [10, 10, 30, 50]
    assert entry["image_id"] == 1 and entry["category_id"] == 3 and entry["score"] == 0.5
    assert dumps_detections([]) == "[]"


def test_detection_round_trip_random(tmp_path, rng):
    dets = []
    for k in range(1000):
        x, y = rng.uniform(0, 500, 2)
        w, h = rng.uniform(0.1, 300, 2)
        dets.append(Detection(int(rng.integers(1, 50)), int(rng.integers(0, 80)), Box(x, y, x + w, y + h),
                              float(rng.uniform())))
    path = tmp_path / "d.json"
    save_detections(dets, path)
    assert load_detections(path) == dets


def test_negative_extent_rejected():
    with pytest.raises(GridFormatError, match="negative width"):
        parse_detections([{"image_id": 1, "category_id": 0, "bbox": [0, 0, -1, 2], "score": 0.5}])
    with pytest.raises(GridFormatError, match="negative height"):
        parse_detections([{"image_id": 1, "category_id": 0, "bbox": [0, 0, 1, -2], "score": 0.5}])
    with pytest.raises(GridFormatError, match="score"):
        parse_detections([{"image_id": 1, "category_id": 0, "bbox": [0, 0, 1, 2], "score": 1.5}])
    with pytest.raises(GridFormatError, match="missing 'bbox'"):
        parse_detections([{"image_id": 1, "category_id": 0, "score": 0.5}])


def test_external_xywh_only_entries_load():
    dets = parse_detections([{"image_id": 2, "category_id": 1, "bbox": [1.5, 2, 3, 4], "score": 0.25}])
    assert dets[0].box == Box(1.5, 2, 4.5, 6)


def test_ground_truth_round_trip(tmp_path):
    gts = {1: [GroundTruth(0, Box(1.25, 2, 30, 40.5))], 2: [], 3: [GroundTruth(2, Box(0, 0, 5, 5))]}
    path = tmp_path / "gt.json"
    save_ground_truth([(1, 64, 64), (2, 64, 64), (3, 32, 32)], gts, path)
    images, back = load_ground_truth(path)
    assert images == [(1, 64, 64), (2, 64, 64), (3, 32, 32)]
    assert back == gts
    doc = json.loads(path.read_text())
    assert doc["annotations"][0]["bbox"] == [1.25, 2, 28.75, 38.5]


def test_level_strides_must_increase():
    validate_levels([LevelSpec("P3", 8), LevelSpec("P4", 16)])
    with pytest.raises(ContractError):
        validate_levels([LevelSpec("P3", 8), LevelSpec("P4", 8)])
    with pytest.raises(ContractError):
        LevelSpec("P0", 0)
