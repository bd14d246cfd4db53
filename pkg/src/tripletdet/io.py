"""File formats: CNGRID tensors, COCO-style detection / ground-truth JSON,
scene manifests.

CNGRID layout::

    b"CNGRID1\\n"                         8-byte magic
    <u4 little-endian header length>
    {"dtype":"f32le","shape":[C,H,W],"name":...}   UTF-8 JSON
    C*H*W little-endian float32 payload

Boxes are ``[x, y, width, height]`` in JSON. Each entry also carries the
exact ``xyxy`` corners under ``"xyxy"`` because ``x + (br_x - x)`` does not
always reproduce ``br_x`` in floating point; readers that only know the COCO
keys ignore it.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import GridFormatError
from .grid import DenseGrid
from .records import Box, Detection, GroundTruth

MAGIC = b"CNGRID1\n"
_LEN = struct.Struct("<I")


def save_grid(grid: DenseGrid, path) -> None:
    header = json.dumps(
        {"dtype": "f32le", "shape": list(grid.shape), "name": grid.name},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = grid.array.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        fh.write(payload)


def load_grid(path) -> DenseGrid:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise GridFormatError(f"{path}: bad magic, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise GridFormatError(f"{path}: header length truncated")
    (hlen,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + hlen:
        raise GridFormatError(f"{path}: header truncated (header length {hlen})")
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{path}: header is not valid JSON ({exc})") from None
    pos += hlen
    if not isinstance(header, dict):
        raise GridFormatError(f"{path}: header must be a JSON object")
    if header.get("dtype") != "f32le":
        raise GridFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape)
    ):
        raise GridFormatError(f"{path}: shape must be three non-negative integers, got {shape!r}")
    count = shape[0] * shape[1] * shape[2]
    payload = raw[pos:]
    if len(payload) != 4 * count:
        raise GridFormatError(
            f"{path}: payload size mismatch, shape {shape} needs {4 * count} bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    bad = np.flatnonzero(~np.isfinite(data.reshape(-1)))
    if bad.size:
        raise GridFormatError(f"{path}: non-finite value at index {int(bad[0])}")
    grid = DenseGrid.wrap(np.ascontiguousarray(data), name=str(header.get("name", "")))
    return grid.freeze()


# -- detections ------------------------------------------------------------


def _bbox_entry(box: Box) -> dict:
    return {
        "bbox": [box.tl_x, box.tl_y, box.br_x - box.tl_x, box.br_y - box.tl_y],
        "xyxy": [box.tl_x, box.tl_y, box.br_x, box.br_y],
    }


def _read_box(entry: dict, where: str) -> Box:
    bbox = entry.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise GridFormatError(f"{where}: 'bbox' must be a list of four numbers")
    x, y, w, h = (float(v) for v in bbox)
    if w < 0:
        raise GridFormatError(f"{where}: negative width {w} in 'bbox'")
    if h < 0:
        raise GridFormatError(f"{where}: negative height {h} in 'bbox'")
    xyxy = entry.get("xyxy")
    if xyxy is not None:
        if not isinstance(xyxy, list) or len(xyxy) != 4:
            raise GridFormatError(f"{where}: 'xyxy' must be a list of four numbers")
        return Box(*(float(v) for v in xyxy))
    return Box(x, y, x + w, y + h)


def detection_to_json(det: Detection) -> dict:
    entry = {"image_id": det.image_id, "category_id": det.class_id, "score": det.score}
    entry.update(_bbox_entry(det.box))
    return entry


def dumps_detections(dets) -> str:
    return json.dumps([detection_to_json(d) for d in dets], sort_keys=True)


def save_detections(dets, path) -> None:
    Path(path).write_text(dumps_detections(dets))


def parse_detections(doc) -> list[Detection]:
    if not isinstance(doc, list):
        raise GridFormatError("detections: top level must be a JSON list")
    out = []
    for k, entry in enumerate(doc):
        where = f"detections[{k}]"
        if not isinstance(entry, dict):
            raise GridFormatError(f"{where}: entry must be an object")
        for key in ("image_id", "category_id", "score", "bbox"):
            if key not in entry:
                raise GridFormatError(f"{where}: missing '{key}'")
        score = float(entry["score"])
        if not 0.0 <= score <= 1.0:
            raise GridFormatError(f"{where}: 'score' {score} outside [0, 1]")
        out.append(Detection(int(entry["image_id"]), int(entry["category_id"]), _read_box(entry, where), score))
    return out


def load_detections(path) -> list[Detection]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_detections(doc)


# -- ground truth ----------------------------------------------------------


def gt_to_json(images, annotations) -> dict:
    """``images``: iterable of (image_id, width, height);
    ``annotations``: mapping image_id -> list of GroundTruth."""
    doc_images = [{"id": i, "width": w, "height": h} for i, w, h in images]
    doc_anns = []
    for image_id in sorted(annotations):
        for gt in annotations[image_id]:
            entry = {"id": len(doc_anns) + 1, "image_id": image_id, "category_id": gt.class_id}
            entry.update(_bbox_entry(gt.box))
            entry["area"] = gt.box.area
            doc_anns.append(entry)
    return {"images": doc_images, "annotations": doc_anns}


def save_ground_truth(images, annotations, path) -> None:
    write_json(path, gt_to_json(images, annotations))


def parse_ground_truth(doc) -> tuple[list[tuple[int, int, int]], dict[int, list[GroundTruth]]]:
    if not isinstance(doc, dict):
        raise GridFormatError("ground truth: top level must be a JSON object")
    for key in ("images", "annotations"):
        if not isinstance(doc.get(key), list):
            raise GridFormatError(f"ground truth: '{key}' must be a list")
    images = []
    for k, img in enumerate(doc["images"]):
        try:
            images.append((int(img["id"]), int(img["width"]), int(img["height"])))
        except (KeyError, TypeError, ValueError):
            raise GridFormatError(f"images[{k}]: need integer 'id', 'width', 'height'") from None
    anns: dict[int, list[GroundTruth]] = {i: [] for i, _, _ in images}
    for k, entry in enumerate(doc["annotations"]):
        where = f"annotations[{k}]"
        if not isinstance(entry, dict):
            raise GridFormatError(f"{where}: entry must be an object")
        for key in ("image_id", "category_id", "bbox"):
            if key not in entry:
                raise GridFormatError(f"{where}: missing '{key}'")
        anns.setdefault(int(entry["image_id"]), []).append(
            GroundTruth(int(entry["category_id"]), _read_box(entry, where))
        )
    return images, anns


def load_ground_truth(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_ground_truth(doc)


# -- misc ------------------------------------------------------------------


def write_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, trailing newline) so reruns are byte-identical."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: not valid JSON ({exc})") from None
