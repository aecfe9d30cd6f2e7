"""Fast system: discrete lattice poses, relation extraction, consistency filtering and repair."""

from __future__ import annotations

import itertools
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .geometry import SceneSpec
from .llm import TagNotFound, parse_tagged_block, render_template
from .relations import (
    ArityError,
    MissingRelation,
    RelationInstance,
    RelationLibrary,
    discrete_check,
    synthesize_relation,
)
from .slow import SceneDescription, object_list_text

log = logging.getLogger(__name__)

POSE_TAG = "</pose>"
RELATIONS_TAG = "</relationships>"
REPAIR_ATTEMPTS = 2

_POSE_LINE = re.compile(r"^[-*\s]*[`*'\"]*(?P<name>[^:`*'\"][^:]*?)[`*'\"]*\s*:\s*\[(?P<coords>[^\]]*)\][`*\s,]*$")
_REL_LINE = re.compile(r"^[-*\s]*`?(?P<name>[A-Za-z_][\w\-]*)\s*\((?P<args>.*)\)\s*`?[\s,;]*$")


class PoseParseError(ValueError):
    pass


class NoAnchor(ValueError):
    pass


class RelationParseError(ValueError):
    pass


@dataclass(frozen=True)
class DiscretePoseSet:
    poses: Mapping[str, tuple[int, int, int]]
    anchor: str

    def __post_init__(self):
        poses = {n: tuple(int(v) for v in p) for n, p in self.poses.items()}
        object.__setattr__(self, "poses", poses)
        if poses.get(self.anchor) != (0, 0, 0):
            raise NoAnchor(f"anchor {self.anchor!r} must sit at (0, 0, 0)")

    def __contains__(self, name: str) -> bool:
        return name in self.poses

    def with_pose(self, name: str, pose: tuple[int, int, int]) -> "DiscretePoseSet":
        return DiscretePoseSet({**self.poses, name: pose}, self.anchor)

    def scaled(self, k: int) -> "DiscretePoseSet":
        return DiscretePoseSet({n: tuple(v * k for v in p) for n, p in self.poses.items()}, self.anchor)

    def context_text(self) -> str:
        return "\n".join(f"{n}: [{p[0]}, {p[1]}, {p[2]}]" for n, p in self.poses.items())


@dataclass(frozen=True)
class TopoRelationSet:
    relations: tuple[RelationInstance, ...] = ()
    dropped: tuple[tuple[RelationInstance, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "dropped", tuple(self.dropped))
        if len(set(self.relations)) != len(self.relations):
            raise ValueError("duplicate relation instances")

    def __iter__(self):
        return iter(self.relations)

    def __len__(self) -> int:
        return len(self.relations)

    def involving(self, name: str) -> list[RelationInstance]:
        return [r for r in self.relations if name in r.args]


# ---------------------------------------------------------------- parsing


def parse_pose_block(block: str) -> dict[str, tuple[float, float, float]]:
    poses = {}
    for raw in block.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _POSE_LINE.match(line)
        if not m:
            raise PoseParseError(f"unparseable pose line: {line!r}")
        try:
            coords = tuple(float(v) for v in m["coords"].split(","))
        except ValueError:
            raise PoseParseError(f"unparseable pose line: {line!r}") from None
        if len(coords) != 3 or not all(math.isfinite(v) for v in coords):
            raise PoseParseError(f"pose needs three finite coordinates: {line!r}")
        poses[m["name"].strip()] = coords
    return poses


def lattice_scale(values: Iterable[float]) -> int:
    """1 for an integral lattice, 2 once any half-step (or finer) value appears."""
    return 1 if all(float(v).is_integer() for v in values) else 2


def to_lattice(poses: Mapping[str, tuple[float, float, float]]) -> tuple[dict[str, tuple[int, int, int]], int]:
    k = lattice_scale(v for p in poses.values() for v in p)
    return {n: tuple(int(round(v * k)) for v in p) for n, p in poses.items()}, k


def parse_relation_lines(block: str) -> list[RelationInstance]:
    out = []
    for raw in block.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _REL_LINE.match(line)
        if not m:
            raise RelationParseError(f"malformed relation line: {line!r}")
        args = tuple(a.strip().strip("'\"` ") for a in m["args"].split(",") if a.strip())
        if not args or any(not a for a in args):
            raise RelationParseError(f"malformed relation line: {line!r}")
        out.append(RelationInstance(m["name"], args))
    return out


# ---------------------------------------------------------------- operations


def gen_discrete_coords(desc: SceneDescription, scene: SceneSpec, gateway) -> DiscretePoseSet:
    prompt = render_template("fast_poses", {
        "<object_list>": object_list_text(scene.names),
        "<scene_description>": desc.text,
    })
    raw = parse_pose_block(parse_tagged_block(gateway.ask(prompt), POSE_TAG))
    known = {n: p for n, p in raw.items() if n in scene.names}
    for extra in set(raw) - set(known):
        log.warning("pose for unknown object %r ignored", extra)
    lattice, _ = to_lattice(known)
    anchor = next((n for n, p in lattice.items() if p == (0, 0, 0)), None)
    if anchor is None:
        raise NoAnchor("no anchor: no object at [0, 0, 0]")
    return DiscretePoseSet(lattice, anchor)


def _context_for(desc: SceneDescription, args: Iterable[str]) -> str:
    lines = [ln.strip() for ln in desc.text.splitlines() if any(a in ln for a in args)]
    return "\n".join(lines) or desc.text[:600]


def _accept(parsed: Iterable[RelationInstance], scene: SceneSpec, lib: RelationLibrary, gateway,
            desc: SceneDescription, kept: list, dropped: list) -> RelationLibrary:
    names = set(scene.names)
    for inst in parsed:
        if inst in kept:
            continue
        unknown = [a for a in inst.args if a not in names]
        if unknown:
            dropped.append((inst, "unknown object"))
            continue
        if inst.relation not in lib:
            log.info("relation %s missing from library; synthesizing", inst.relation)
            defn = synthesize_relation(inst.relation, _context_for(desc, inst.args), gateway, lib)
            lib = lib.with_entry(defn, "llm_synthesized")
        if not lib.get(inst.relation).accepts(len(inst.args)) or len(set(inst.args)) != len(inst.args):
            dropped.append((inst, "arity mismatch"))
            continue
        kept.append(inst)
    return lib


def extract_relations(desc: SceneDescription, scene: SceneSpec, lib: RelationLibrary,
                      gateway) -> tuple[TopoRelationSet, RelationLibrary]:
    """Parse the relation block; synthesizes unknown relation names into a new library value."""
    prompt = render_template("fast_relations", {
        "<object_list>": object_list_text(scene.names),
        "<scene_description>": desc.text,
        "<relationship_library>": lib.describe(),
    })
    parsed = parse_relation_lines(parse_tagged_block(gateway.ask(prompt), RELATIONS_TAG))
    kept, dropped = [], []
    lib = _accept(parsed, scene, lib, gateway, desc, kept, dropped)
    return TopoRelationSet(tuple(kept), tuple(dropped)), lib


def consistency_filter(C: DiscretePoseSet, R: TopoRelationSet, lib: RelationLibrary,
                       objects: Iterable[str] | None = None) -> tuple[TopoRelationSet, frozenset[str]]:
    """Drop relations the lattice contradicts; also report functionally incomplete objects.

    ``objects`` is the scene's object list. Without it only names already in
    ``C`` or in ``R`` are checked, so objects absent from both go unnoticed.
    """
    if objects is None:
        objects = list(dict.fromkeys([*C.poses, *(a for inst in R.relations for a in inst.args)]))
    kept, dropped = [], list(R.dropped)
    for inst in R.relations:
        if any(a not in C for a in inst.args):
            dropped.append((inst, "missing object"))
        elif not discrete_check(inst, C, lib):
            kind = lib.get(inst.relation).kind
            dropped.append((inst, "rpc sign mismatch" if kind == "Relative" else "alignment mismatch"))
        else:
            kept.append(inst)
    covered = {a for inst in kept for a in inst.args}
    incomplete = frozenset(
        n for n in objects if n not in C or (n != C.anchor and n not in covered)
    )
    return TopoRelationSet(tuple(kept), tuple(dropped)), incomplete


def _free_cell(C: DiscretePoseSet, exclude: str | None = None, radius: int = 12) -> tuple[int, int, int]:
    """Nearest unoccupied z=0 cell to the anchor, ignoring ``exclude``'s own cell."""
    taken = {p for n, p in C.poses.items() if n != exclude}
    cells = [(x, y, 0) for x, y in itertools.product(range(-radius, radius + 1), repeat=2)]
    cells.sort(key=lambda c: (c[0] ** 2 + c[1] ** 2, abs(c[1]), c[1], c[0]))
    for cell in cells:
        if cell not in taken:
            return cell
    raise RuntimeError("no free lattice cell near the anchor")


def _merge_pose(C: DiscretePoseSet, name: str, pose: tuple[float, float, float]) -> DiscretePoseSet:
    k = lattice_scale(pose)
    if k > 1:
        C = C.scaled(k)
    return C.with_pose(name, tuple(int(round(v * k)) for v in pose))


def repair_incomplete(C: DiscretePoseSet, R: TopoRelationSet, incomplete: Iterable[str], scene: SceneSpec,
                      desc: SceneDescription, lib: RelationLibrary, gateway,
                      attempts: int = REPAIR_ATTEMPTS) -> tuple[DiscretePoseSet, TopoRelationSet, RelationLibrary]:
    """Re-place each incomplete object with a targeted LLM call; force-place it after ``attempts`` failures."""
    pending = [n for n in scene.names if n in set(incomplete)]
    if not pending:
        raise ValueError("repair_incomplete needs a non-empty incomplete set")
    for name in pending:
        placed = False
        for attempt in range(1, attempts + 1):
            prompt = render_template("fast_repair", {
                "<pose_context>": C.context_text(),
                "<relationship_library>": lib.describe(),
                "<object_list>": object_list_text([name]),
                "<scene_description>": desc.text,
            })
            if attempt > 1:
                prompt += f"\n\nAttempt {attempt}: the previous placement of {name} did not pass the checks."
            reply = gateway.ask(prompt)
            try:
                poses = parse_pose_block(parse_tagged_block(reply, POSE_TAG))
                parsed = parse_relation_lines(parse_tagged_block(reply, RELATIONS_TAG))
            except (TagNotFound, PoseParseError, RelationParseError) as e:
                log.info("repair of %s, attempt %d: %s", name, attempt, e)
                continue
            if name not in poses:
                log.info("repair of %s, attempt %d: no pose returned", name, attempt)
                continue
            C_try = _merge_pose(C, name, poses[name])
            kept = list(R.relations)
            retry = [inst for inst, why in R.dropped if why == "missing object"]
            still_dropped = [(inst, why) for inst, why in R.dropped if why != "missing object"]
            lib_try = _accept(parsed + retry, scene, lib, gateway, desc, kept, still_dropped)
            R_try, inc = consistency_filter(C_try, TopoRelationSet(tuple(kept), tuple(still_dropped)), lib_try,
                                            scene.names)
            if name not in inc:
                C, R, lib = C_try, R_try, lib_try
                placed = True
                break
            log.info("repair of %s, attempt %d: still incomplete", name, attempt)
        if not placed:
            cell = _free_cell(C, exclude=name)
            C = C.with_pose(name, cell)
            fallback = RelationInstance("near_of", (name, C.anchor))
            relations = tuple(R.relations) + ((fallback,) if fallback not in R.relations else ())
            R, _ = consistency_filter(C, TopoRelationSet(relations, R.dropped), lib, scene.names)
            log.warning("force-placed %s at %s with near_of(%s, %s)", name, cell, name, C.anchor)
    return C, R, lib


@dataclass(frozen=True)
class Stage1Result:
    description: SceneDescription
    poses: DiscretePoseSet
    relations: TopoRelationSet
    library: RelationLibrary
    repaired: frozenset[str] = field(default_factory=frozenset)


def run_stage1(scene: SceneSpec, lib: RelationLibrary, gateway, sample: int = 1, rrg_iters: int = 3) -> Stage1Result:
    from .slow import rrg

    desc = rrg(scene, lib, gateway, max_iters=rrg_iters, sample=sample)
    C = gen_discrete_coords(desc, scene, gateway)
    R, lib = extract_relations(desc, scene, lib, gateway)
    R, incomplete = consistency_filter(C, R, lib, scene.names)
    if incomplete:
        C, R, lib = repair_incomplete(C, R, incomplete, scene, desc, lib, gateway)
    return Stage1Result(desc, C, R, lib, incomplete)
