"""Adaptive relation library: relation definitions, compiled scorers and validators.

Every relation carries a declarative :class:`ConstraintSpec`. Scoring is
vectorized over a leading population axis so the grounding GA and the
post-hoc validator run the exact same code path.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .geometry import Boundary, Layout

log = logging.getLogger(__name__)

ARITIES = ("Unary", "Binary", "Nary")
KINDS = ("Anchoring", "Relative", "Alignment")
AXES = ("x", "y", "z", "xy", "none")
ALIGN_MODES = ("none", "center_x", "center_y", "center_z")
PROVENANCES = ("builtin", "llm_synthesized", "adjusted")
FORMAT_VERSION = 1

# zone name -> (axis index, measured coordinate, lo, hi) as fractions of the surface extent
ANCHOR_ZONES = {
    "central_column": (0, "center", 1 / 3, 2 / 3),
    "central_row": (1, "center", 1 / 3, 2 / 3),
    "near_front_edge": (1, "min", 0.0, 0.15),
    "near_back_edge": (1, "max", 0.85, 1.0),
    "near_left_edge": (0, "min", 0.0, 0.15),
    "near_right_edge": (0, "max", 0.85, 1.0),
}

# centers that must agree for each alignment mode (the line runs along the named axis)
ALIGNED_AXES = {"center_x": (1, 2), "center_y": (0, 2), "center_z": (0, 1)}

CONTACT_EPS = 1e-6


class RelationError(Exception):
    pass


class MissingRelation(RelationError, KeyError):
    def __str__(self):
        return f"missing relation: {self.args[0]}"


class ArityError(RelationError):
    pass


class AdjustmentLimit(RelationError):
    pass


class SynthesisFailed(RelationError):
    pass


class LibrarySchemaError(RelationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


@dataclass(frozen=True)
class ConstraintSpec:
    primary_axis: str = "none"
    min_gap_frac: float = 0.01
    max_gap_frac: float = 0.06
    overlap_axis: str = "none"
    require_overlap: bool = False
    align_mode: str = "none"
    anchor_zone: str | None = None
    falloff_frac: float = 0.05

    def __post_init__(self):
        if not 0 <= self.min_gap_frac < self.max_gap_frac <= 1:
            raise ValueError(f"gap band must satisfy 0 <= min < max <= 1, got {self.min_gap_frac}, {self.max_gap_frac}")
        if self.primary_axis not in AXES or self.overlap_axis not in AXES:
            raise ValueError(f"unknown axis selector in {self}")
        if self.align_mode not in ALIGN_MODES:
            raise ValueError(f"unknown align_mode {self.align_mode!r}")
        if self.anchor_zone is not None and self.anchor_zone not in ANCHOR_ZONES:
            raise ValueError(f"unknown anchor zone {self.anchor_zone!r}")
        if self.falloff_frac <= 0:
            raise ValueError("falloff_frac must be positive")


@dataclass(frozen=True)
class ValidationSpec:
    tolerance_frac: float = 1.5
    max_adjustments: int = 3

    def __post_init__(self):
        if self.tolerance_frac < 1:
            raise ValueError("tolerance_frac must be >= 1")
        if self.max_adjustments < 0:
            raise ValueError("max_adjustments must be >= 0")


@dataclass(frozen=True)
class RelationDef:
    name: str
    arity: str
    kind: str
    definition: str
    rpc: tuple[int, int, int] | None
    constraint: ConstraintSpec
    validation: ValidationSpec = ValidationSpec()
    revision: int = 0

    def __post_init__(self):
        if self.arity not in ARITIES:
            raise ValueError(f"unknown arity token {self.arity!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        if self.rpc is not None:
            rpc = tuple(int(v) for v in self.rpc)
            if len(rpc) != 3 or any(v not in (-1, 0, 1) for v in rpc):
                raise ValueError(f"rpc must be three signs in {{-1,0,1}}, got {self.rpc}")
            object.__setattr__(self, "rpc", rpc)
        if self.kind == "Relative" and self.rpc is None:
            raise ValueError(f"relative relation {self.name!r} needs an rpc")
        if self.arity == "Unary" and self.rpc is not None:
            raise ValueError(f"unary relation {self.name!r} cannot carry an rpc")
        if self.revision < 0:
            raise ValueError("revision must be >= 0")
        _check_compiles(self)

    def accepts(self, n_args: int) -> bool:
        return {"Unary": n_args == 1, "Binary": n_args == 2, "Nary": n_args >= 2}[self.arity]


def _check_compiles(d: RelationDef) -> None:
    c = d.constraint
    if d.kind == "Anchoring":
        if c.anchor_zone is None:
            raise ValueError(f"anchoring relation {d.name!r} needs an anchor_zone")
    elif d.kind == "Alignment":
        if c.align_mode == "none":
            raise ValueError(f"alignment relation {d.name!r} needs an align_mode")
    elif d.arity == "Unary":
        raise ValueError(f"relative relation {d.name!r} cannot be unary")


@dataclass(frozen=True)
class RelationInstance:
    relation: str
    args: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    def __str__(self):
        return f"{self.relation}(" + ", ".join(repr(a) for a in self.args) + ")"


@dataclass(frozen=True)
class RelationLibrary:
    entries: Mapping[str, RelationDef] = field(default_factory=dict)
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, d in self.entries.items():
            if d.name != name:
                raise ValueError(f"entry key {name!r} does not match relation name {d.name!r}")
        if set(self.provenance) != set(self.entries):
            raise ValueError("provenance must cover exactly the library entries")
        for p in self.provenance.values():
            if p not in PROVENANCES:
                raise ValueError(f"unknown provenance {p!r}")

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, name: str) -> RelationDef:
        try:
            return self.entries[name]
        except KeyError:
            raise MissingRelation(name) from None

    def names(self) -> list[str]:
        return list(self.entries)

    def with_entry(self, d: RelationDef, provenance: str) -> "RelationLibrary":
        entries = dict(self.entries)
        prov = dict(self.provenance)
        entries[d.name] = d
        prov[d.name] = provenance
        return RelationLibrary(entries, prov)

    def without(self, name: str) -> "RelationLibrary":
        entries = {k: v for k, v in self.entries.items() if k != name}
        prov = {k: v for k, v in self.provenance.items() if k != name}
        return RelationLibrary(entries, prov)

    def describe(self) -> str:
        """Human/LLM-readable listing used to fill prompt templates."""
        lines = []
        for d in self.entries.values():
            item = {"type": d.arity, "definition": d.definition}
            if d.rpc is not None:
                item["RPC"] = list(d.rpc)
            lines.append(json.dumps({d.name: item}))
        return "\n".join(lines)


# ---------------------------------------------------------------- builtins


def _relative(name, rpc, definition, **kw) -> RelationDef:
    planar = [a for a, v in zip("xy", rpc[:2]) if v]
    if rpc[2]:
        spec = ConstraintSpec(primary_axis="z", falloff_frac=0.01, **kw)
    elif not planar:
        spec = ConstraintSpec(primary_axis="xy", **kw)
    elif len(planar) == 1:
        cross = "y" if planar[0] == "x" else "x"
        spec = ConstraintSpec(primary_axis=planar[0], overlap_axis=cross, require_overlap=True, **kw)
    else:
        spec = ConstraintSpec(primary_axis="xy", **kw)
    return RelationDef(name, "Binary", "Relative", definition, rpc, spec)


def builtin_library() -> RelationLibrary:
    defs = [
        _relative("left_of", (-1, 0, 0), "Obj_A is to the left of Obj_B along x, within a small gap, overlapping in y."),
        _relative("right_of", (1, 0, 0), "Obj_A is to the right of Obj_B along x, within a small gap, overlapping in y."),
        _relative("above_of", (0, 1, 0), "Obj_A is behind Obj_B along +y (farther from the user), within a small gap, overlapping in x."),
        _relative("below_of", (0, -1, 0), "Obj_A is in front of Obj_B along -y (closer to the user), within a small gap, overlapping in x."),
        _relative("right_above_of", (1, 1, 0), "Obj_A is diagonally right of and behind Obj_B, within a small gap on both axes."),
        _relative("on_top_of", (0, 0, 1), "Obj_A rests on the top face of Obj_B with its footprint inside Obj_B's footprint."),
        _relative("near_of", (0, 0, 0), "Obj_A is close to Obj_B on the surface without touching it.", max_gap_frac=0.2),
        RelationDef("aligned_in_x_axis", "Nary", "Alignment",
                    "The objects form a row along x: their y centers coincide.", None,
                    ConstraintSpec(align_mode="center_x", falloff_frac=0.02)),
        RelationDef("aligned_in_y_axis", "Nary", "Alignment",
                    "The objects form a column along y: their x centers coincide.", None,
                    ConstraintSpec(align_mode="center_y", falloff_frac=0.02)),
        RelationDef("align_z-axis_at_center", "Nary", "Alignment",
                    "The objects are stacked along z with coinciding x and y centers.", None,
                    ConstraintSpec(align_mode="center_z", falloff_frac=0.02)),
        RelationDef("central_column", "Unary", "Anchoring",
                    "The object's center lies in the middle third of the surface width.", None,
                    ConstraintSpec(anchor_zone="central_column")),
        RelationDef("near_front_edge", "Unary", "Anchoring",
                    "The object's front side lies within the front 15% of the surface depth.", None,
                    ConstraintSpec(anchor_zone="near_front_edge")),
    ]
    return RelationLibrary({d.name: d for d in defs}, {d.name: "builtin" for d in defs})


# ---------------------------------------------------------------- scoring


def _gauss(d, sigma):
    return np.exp(-0.5 * (d / sigma) ** 2)


def _band(gap, lo, hi, sigma):
    below = np.where(gap < lo, _gauss(lo - gap, sigma), 1.0)
    above = np.where(gap > hi, _gauss(gap - hi, sigma), 1.0)
    return below * above


def score_batch(d: RelationDef, mins: np.ndarray, maxs: np.ndarray, boundary: Boundary, tolerance: float = 1.0) -> np.ndarray:
    """Score a relation over a batch of layouts.

    ``mins``/``maxs`` have shape (P, k, 3) for the k relation arguments in
    order. ``tolerance`` >= 1 widens every threshold (1 = constraint mode).
    """
    mins = np.asarray(mins, dtype=float)
    maxs = np.asarray(maxs, dtype=float)
    if not d.accepts(mins.shape[1]):
        raise ArityError(f"{d.name} is {d.arity}, got {mins.shape[1]} args")
    c = d.constraint
    W = boundary.width
    sigma = c.falloff_frac * W
    lo = c.min_gap_frac * W / tolerance
    hi = c.max_gap_frac * W * tolerance

    if d.kind == "Anchoring":
        axis, which, zlo, zhi = ANCHOR_ZONES[c.anchor_zone]
        origin = boundary.origin_x if axis == 0 else boundary.origin_y
        extent = boundary.width if axis == 0 else boundary.depth
        mn, mx = mins[:, 0, axis], maxs[:, 0, axis]
        coord = {"center": (mn + mx) / 2, "min": mn, "max": mx}[which]
        mid, half = (zlo + zhi) / 2, (zhi - zlo) / 2 * tolerance
        return _band(coord - origin, (mid - half) * extent, (mid + half) * extent, sigma)

    if d.kind == "Alignment":
        centers = (mins + maxs) / 2
        slack = c.min_gap_frac * W * tolerance
        out = np.ones(mins.shape[0])
        # z centers depend on object heights; only planar centers are scored
        for axis in ALIGNED_AXES[c.align_mode]:
            if axis == 2:
                continue
            spread = centers[:, :, axis].max(axis=1) - centers[:, :, axis].min(axis=1)
            out = out * np.where(spread <= slack, 1.0, _gauss(spread - slack, sigma))
        return out

    a_min, a_max, b_min, b_max = mins[:, 0], maxs[:, 0], mins[:, 1], maxs[:, 1]
    rpc = d.rpc
    if rpc[2]:
        if rpc[2] < 0:
            a_min, a_max, b_min, b_max = b_min, b_max, a_min, a_max
        contact = np.abs(a_min[:, 2] - b_max[:, 2]) <= CONTACT_EPS * max(1.0, W)
        overhang = np.maximum.reduce([
            b_min[:, 0] - a_min[:, 0], a_max[:, 0] - b_max[:, 0],
            b_min[:, 1] - a_min[:, 1], a_max[:, 1] - b_max[:, 1],
            np.zeros(len(a_min)),
        ])
        allowed = (tolerance - 1.0) * c.min_gap_frac * W
        return np.where(contact, np.where(overhang <= allowed, 1.0, _gauss(overhang - allowed, sigma)), 0.0)

    if rpc[0] == 0 and rpc[1] == 0:
        sep = np.maximum(
            np.maximum(b_min[:, 0] - a_max[:, 0], a_min[:, 0] - b_max[:, 0]),
            np.maximum(b_min[:, 1] - a_max[:, 1], a_min[:, 1] - b_max[:, 1]),
        )
        return np.where(sep > 0, _band(sep, lo, hi, sigma), 0.0)

    out = np.ones(mins.shape[0])
    for axis in (0, 1):
        if rpc[axis] == 0:
            continue
        gap = b_min[:, axis] - a_max[:, axis] if rpc[axis] < 0 else a_min[:, axis] - b_max[:, axis]
        out = out * np.where(gap > 0, _band(gap, lo, hi, sigma), 0.0)
    if c.require_overlap and c.overlap_axis in ("x", "y", "xy"):
        axes = (0, 1) if c.overlap_axis == "xy" else ("xy".index(c.overlap_axis),)
        for axis in axes:
            ov = np.minimum(a_max[:, axis], b_max[:, axis]) - np.maximum(a_min[:, axis], b_min[:, axis])
            shorter = np.minimum(a_max[:, axis] - a_min[:, axis], b_max[:, axis] - b_min[:, axis])
            ratio = np.clip(ov / np.maximum(shorter, 1e-12), 0.0, 1.0)
            out = out * np.minimum(1.0, ratio * tolerance)
    return out


def _resolve(instance: RelationInstance, layout: Layout, lib: RelationLibrary):
    d = lib.get(instance.relation)
    if not d.accepts(len(instance.args)):
        raise ArityError(f"{instance}: {d.name} is {d.arity}")
    missing = [a for a in instance.args if a not in layout.boxes]
    if missing:
        raise KeyError(f"{instance}: objects not in layout: {missing}")
    mins = np.array([[layout.boxes[a].min.as_tuple() for a in instance.args]])
    maxs = np.array([[layout.boxes[a].max.as_tuple() for a in instance.args]])
    return d, mins, maxs


def score(instance: RelationInstance, layout: Layout, boundary: Boundary, lib: RelationLibrary) -> float:
    d, mins, maxs = _resolve(instance, layout, lib)
    return float(score_batch(d, mins, maxs, boundary)[0])


def validate(instance: RelationInstance, layout: Layout, boundary: Boundary, lib: RelationLibrary) -> bool:
    d, mins, maxs = _resolve(instance, layout, lib)
    return bool(score_batch(d, mins, maxs, boundary, d.validation.tolerance_frac)[0] >= 0.5)


def discrete_check(instance: RelationInstance, discrete, lib: RelationLibrary) -> bool:
    """Check a relation against integer lattice poses (``discrete.poses``)."""
    d = lib.get(instance.relation)
    if not d.accepts(len(instance.args)):
        raise ArityError(f"{instance}: {d.name} is {d.arity}")
    poses = [discrete.poses[a] for a in instance.args]
    if d.kind == "Anchoring":
        return True
    if d.kind == "Alignment":
        axes = ALIGNED_AXES[d.constraint.align_mode]
        return all(p[ax] == poses[0][ax] for p in poses[1:] for ax in axes)
    a, b = poses
    for axis, sign in enumerate(d.rpc):
        if sign == 0:
            continue
        delta = a[axis] - b[axis]
        if (delta > 0) - (delta < 0) != sign:
            return False
    return True


# ---------------------------------------------------------------- adjustment


@dataclass(frozen=True)
class FailureEvidence:
    """Why a relation failed validation; drives :func:`adjust_parameters`."""

    relation: str
    kind: str  # "gap_overflow" or "overlap_shortfall"
    detail: Mapping[str, float] = field(default_factory=dict)


def diagnose(instance: RelationInstance, layout: Layout, boundary: Boundary, lib: RelationLibrary) -> FailureEvidence:
    d, mins, maxs = _resolve(instance, layout, lib)
    c = d.constraint
    if d.kind == "Relative" and not d.rpc[2]:
        a_min, a_max, b_min, b_max = mins[0, 0], maxs[0, 0], mins[0, 1], maxs[0, 1]
        gaps = []
        for axis in (0, 1):
            if d.rpc[axis] < 0:
                gaps.append(b_min[axis] - a_max[axis])
            elif d.rpc[axis] > 0:
                gaps.append(a_min[axis] - b_max[axis])
        if not gaps:
            gaps.append(max(b_min[0] - a_max[0], a_min[0] - b_max[0], b_min[1] - a_max[1], a_min[1] - b_max[1]))
        widened_max = c.max_gap_frac * boundary.width * d.validation.tolerance_frac
        worst = max(gaps)
        if worst > widened_max:
            return FailureEvidence(d.name, "gap_overflow", {"gap": float(worst), "max_gap": float(widened_max)})
    return FailureEvidence(d.name, "overlap_shortfall", {})


def adjust_parameters(entry: RelationDef, evidence: FailureEvidence | str) -> RelationDef:
    """Conservatively widen one threshold of ``entry``; never tightens."""
    kind = evidence if isinstance(evidence, str) else evidence.kind
    if entry.revision >= entry.validation.max_adjustments:
        raise AdjustmentLimit(f"adjustment limit reached for {entry.name} (revision {entry.revision})")
    c = entry.constraint
    if kind == "gap_overflow" and c.max_gap_frac < 1.0:
        new_c = replace(c, max_gap_frac=min(1.0, c.max_gap_frac * 1.25))
        return replace(entry, constraint=new_c, revision=entry.revision + 1)
    if kind not in ("gap_overflow", "overlap_shortfall"):
        raise ValueError(f"unknown failure evidence {kind!r}")
    new_v = replace(entry.validation, tolerance_frac=entry.validation.tolerance_frac * 1.25)
    return replace(entry, validation=new_v, revision=entry.revision + 1)


# ---------------------------------------------------------------- persistence


def relation_to_dict(d: RelationDef) -> dict:
    out = asdict(d)
    out["rpc"] = list(d.rpc) if d.rpc is not None else None
    return out


def relation_from_dict(raw: Mapping) -> RelationDef:
    rpc = raw.get("rpc")
    return RelationDef(
        name=raw["name"],
        arity=raw["arity"],
        kind=raw["kind"],
        definition=raw.get("definition", ""),
        rpc=tuple(rpc) if rpc is not None else None,
        constraint=ConstraintSpec(**raw.get("constraint", {})),
        validation=ValidationSpec(**raw.get("validation", {})),
        revision=int(raw.get("revision", 0)),
    )


def save_library(lib: RelationLibrary, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "relations": [dict(relation_to_dict(d), provenance=lib.provenance[n]) for n, d in lib.entries.items()],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _line_of(text: str, needle: str) -> int | None:
    idx = text.find(needle)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def load_library(path) -> RelationLibrary:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise LibrarySchemaError(f"malformed library file: {e.msg}", e.lineno) from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise LibrarySchemaError(f"expected format_version {FORMAT_VERSION}", _line_of(text, "format_version") or 1)
    if not isinstance(doc.get("relations"), list):
        raise LibrarySchemaError("missing 'relations' list", 1)
    entries, prov = {}, {}
    for raw in doc["relations"]:
        name = raw.get("name") if isinstance(raw, dict) else None
        line = _line_of(text, json.dumps(name)) if name else None
        if not name:
            raise LibrarySchemaError("relation without a name", line)
        for key, allowed in (("arity", ARITIES), ("kind", KINDS), ("provenance", PROVENANCES)):
            if raw.get(key) not in allowed:
                token = raw.get(key)
                raise LibrarySchemaError(f"unknown {key} token {token!r} in relation {name!r}",
                                         _line_of(text, json.dumps(token)) or line)
        try:
            d = relation_from_dict(raw)
        except (TypeError, ValueError, KeyError) as e:
            raise LibrarySchemaError(f"invalid relation {name!r}: {e}", line) from None
        if name in entries:
            raise LibrarySchemaError(f"duplicate relation {name!r}", line)
        entries[name] = d
        prov[name] = raw["provenance"]
    return RelationLibrary(entries, prov)


# ---------------------------------------------------------------- synthesis

_KIND_FOR_ARITY = {"Unary": "Anchoring", "Binary": "Relative", "Nary": "Alignment"}
_ARITY_ALIASES = {"unary": "Unary", "binary": "Binary", "nary": "Nary", "n-ary": "Nary", "multiple": "Nary"}


def _parse_definition(block: str, name: str) -> dict:
    doc = json.loads(block)
    if isinstance(doc, dict) and name in doc and isinstance(doc[name], dict):
        doc = doc[name]
    if not isinstance(doc, dict):
        raise ValueError("definition must be a JSON object")
    arity = _ARITY_ALIASES.get(str(doc.get("type", "")).lower())
    if arity is None:
        raise ValueError(f"unknown relation type {doc.get('type')!r}")
    rpc = doc.get("RPC", doc.get("rpc"))
    return {
        "arity": arity,
        "kind": doc.get("kind", _KIND_FOR_ARITY[arity]),
        "definition": str(doc.get("definition", "")),
        "rpc": tuple(int(v) for v in rpc) if rpc is not None and arity != "Unary" else None,
    }


def _parse_json_block(block: str, cls):
    doc = json.loads(block)
    if not isinstance(doc, dict):
        raise ValueError("expected a JSON object")
    known = set(cls.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    return cls(**doc)


def synthesize_relation(name: str, context: str, gateway, lib: RelationLibrary, retries: int = 2) -> RelationDef:
    """Create a missing relation by asking the LLM for its definition, constraint and validation specs."""
    from .llm import LLMError, parse_tagged_block, render_template

    if name in lib:
        raise ValueError(f"relation {name!r} already in library")

    def ask(template_id, subs, tag, parse):
        prompt = render_template(template_id, subs)
        last_err = None
        for attempt in range(retries + 1):
            text = prompt if attempt == 0 else (
                f"{prompt}\n\nYour previous reply (attempt {attempt}) could not be parsed: {last_err}. "
                f"Answer again and put the JSON between two {tag} tokens."
            )
            reply = gateway.ask(text)
            try:
                return parse(parse_tagged_block(reply, tag))
            except (LLMError, ValueError, TypeError, KeyError) as e:
                last_err = e
                log.info("synthesis of %s: unparseable %s reply: %s", name, template_id, e)
        raise SynthesisFailed(f"synthesis failed for {name!r}: {last_err}")

    head = ask("arl_define", {"<complete_relationship>": lib.describe(), "<incomplete_relationship>": name},
               "</new_relationship>", lambda b: _parse_definition(b, name))
    definition = head["definition"] or name
    constraint = ask("arl_constraint", {"<relationship_name>": name, "<relationship_definition>": definition,
                                        "<spatial_description>": context},
                     "</func>", lambda b: _parse_json_block(b, ConstraintSpec))
    validation = ask("arl_validation", {"<relationship_name>": name, "<relationship_definition>": definition,
                                        "<spatial_description>": context},
                     "</func>", lambda b: _parse_json_block(b, ValidationSpec))
    try:
        return RelationDef(name, head["arity"], head["kind"], definition, head["rpc"], constraint, validation)
    except ValueError as e:
        raise SynthesisFailed(f"synthesis failed for {name!r}: {e}") from None

