"""JSON documents written by the CLI: layout.json, metrics.json and report.json."""

from __future__ import annotations

import json
import math
from pathlib import Path

from .geometry import Aabb, Boundary, Layout, Vec3

LAYOUT_FORMAT = 1


class SchemaError(ValueError):
    pass


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def boundary_to_dict(b: Boundary) -> dict:
    return {"width": b.width, "depth": b.depth, "surface_z": b.surface_z, "origin_x": b.origin_x, "origin_y": b.origin_y}


def layout_to_dict(layout: Layout, boundary: Boundary, requested, scenario: str | None = None,
                   case: int | None = None) -> dict:
    objects = {}
    for name in layout.names:
        box = layout.boxes[name]
        objects[name] = {
            "center": list(box.center.as_tuple()),
            "size": list(box.size.as_tuple()),
            "box": {"min": list(box.min.as_tuple()), "max": list(box.max.as_tuple())},
        }
    return {
        "format_version": LAYOUT_FORMAT,
        "scenario": scenario,
        "case": case,
        "boundary": boundary_to_dict(boundary),
        "requested": list(requested),
        "objects": objects,
    }


def _vec(raw, where: str) -> Vec3:
    if not isinstance(raw, list) or len(raw) != 3 or not all(isinstance(v, (int, float)) for v in raw):
        raise SchemaError(f"{where}: expected three numbers")
    try:
        return Vec3.of(raw)
    except ValueError as e:
        raise SchemaError(f"{where}: {e}") from None


def layout_from_dict(doc) -> tuple[Layout, Boundary, list[str], dict]:
    """Parse and check a layout document; returns (layout, boundary, requested, header)."""
    if not isinstance(doc, dict):
        raise SchemaError("layout: top level must be an object")
    if doc.get("format_version") != LAYOUT_FORMAT:
        raise SchemaError(f"layout: expected format_version {LAYOUT_FORMAT}")
    raw_b = doc.get("boundary")
    try:
        boundary = Boundary(**raw_b)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"layout.boundary: {e}") from None
    requested = doc.get("requested")
    if not isinstance(requested, list) or not all(isinstance(n, str) for n in requested):
        raise SchemaError("layout.requested: expected a list of names")
    objects = doc.get("objects")
    if not isinstance(objects, dict):
        raise SchemaError("layout.objects: expected an object map")
    boxes = {}
    for name, raw in objects.items():
        where = f"layout.objects[{name!r}]"
        if not isinstance(raw, dict) or not isinstance(raw.get("box"), dict):
            raise SchemaError(f"{where}: expected center, size and box")
        lo, hi = _vec(raw["box"].get("min"), where + ".box.min"), _vec(raw["box"].get("max"), where + ".box.max")
        try:
            box = Aabb(lo, hi)
        except ValueError as e:
            raise SchemaError(f"{where}: {e}") from None
        center, size = _vec(raw.get("center"), where + ".center"), _vec(raw.get("size"), where + ".size")
        if any(not math.isclose(a, b, abs_tol=1e-6) for a, b in zip(center.as_tuple(), box.center.as_tuple())):
            raise SchemaError(f"{where}: center does not match box")
        if any(not math.isclose(a, b, abs_tol=1e-6) for a, b in zip(size.as_tuple(), box.size.as_tuple())):
            raise SchemaError(f"{where}: size does not match box")
        boxes[name] = box
    header = {"scenario": doc.get("scenario"), "case": doc.get("case")}
    return Layout.from_boxes(boxes), boundary, requested, header


def read_layout(path) -> tuple[Layout, Boundary, list[str], dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from None
    return layout_from_dict(doc)
