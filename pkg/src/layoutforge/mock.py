"""Deterministic scripted stand-ins for the chat model.

The heuristic policy recognises which prompt template it was sent, plans a
row-based tabletop arrangement from catalog sizes and answers in the tagged
formats the pipeline parses. It exists so the whole pipeline can run offline
and so replay fixtures can be recorded without network access; it makes no
claim to the judgement quality of a real model.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

from .corpus import SizeCatalog, base_category
from .geometry import Vec3
from .llm import TEMPLATE_IDS, ChatRequest, load_template, wrap_block

ROW_GAP_CM = 3.0
ROW_FILL = 0.85
MAX_PER_ROW = 4
DEFAULT_SIZE = Vec3(10.0, 10.0, 10.0)

# child category -> supporting category
STACK_ON = {
    "cup": "cup saucer",
    "mug": "cup saucer",
    "coffee cup": "cup saucer",
    "candle": "candleholder",
    "bowl": "plate",
    "cake": "plate",
}

_OFFSETS = {
    "left_of": (-1, 0, 0),
    "right_of": (1, 0, 0),
    "above_of": (0, 1, 0),
    "below_of": (0, -1, 0),
    "on_top_of": (0, 0, 1),
}


@lru_cache(maxsize=None)
def _template_heads() -> dict[str, str]:
    return {tid: load_template(tid).split("\n", 1)[0] for tid in TEMPLATE_IDS}


def identify_template(prompt: str) -> str | None:
    for tid, head in _template_heads().items():
        if prompt.startswith(head):
            return tid
    return None


_LABELS = (
    "Object List", "Missing object", "Scene Description", "Task Instruction", "Description", "Output",
    "Rendered layout", "relationship name", "relationship definition", "spatial description",
    "constraint", "validation settings",
)
_NEXT_LABEL = "|".join(re.escape(x) for x in _LABELS)


def _field(prompt: str, label: str) -> str | None:
    m = re.search(rf"^- {re.escape(label)}: (.*?)(?=\n- (?:{_NEXT_LABEL}):|\n\n|\Z)", prompt, re.S | re.M)
    return m.group(1).strip() if m else None


def _names_field(prompt: str, label: str) -> list[str]:
    raw = _field(prompt, label)
    if raw is None:
        return []
    return list(json.loads(raw))


def _name_pattern(names: Iterable[str]) -> str:
    return "(" + "|".join(re.escape(n) for n in sorted(set(names), key=len, reverse=True)) + ")"


# ---------------------------------------------------------------- planning


@dataclass(frozen=True)
class Statement:
    relation: str
    args: tuple[str, ...]


@dataclass
class Plan:
    anchor: str
    rows: list[list[str]]
    stacks: dict[str, str]  # child -> parent
    statements: list[Statement] = field(default_factory=list)


def _size(catalog: SizeCatalog, name: str) -> Vec3:
    return catalog.size_of(name) if name in catalog else DEFAULT_SIZE


def _pair_stacks(names: list[str], catalog: SizeCatalog) -> dict[str, str]:
    stacks: dict[str, str] = {}
    used: set[str] = set()
    for child_cat, parent_cat in STACK_ON.items():
        children = sorted(n for n in names if base_category(n) == child_cat)
        parents = sorted(n for n in names if base_category(n) == parent_cat and n not in used)
        for child, parent in zip(children, parents):
            c, p = _size(catalog, child), _size(catalog, parent)
            if child in stacks or child in used or c.x > p.x or c.y > p.y:
                continue
            stacks[child] = parent
            used.update((child, parent))
    return stacks


def plan_scene(names: list[str], catalog: SizeCatalog | None = None, variant: int = 1) -> Plan:
    """Rows of ground objects (largest first), stacked pairs on top, balanced left/right chains."""
    catalog = catalog or SizeCatalog.bundled()
    width, depth = catalog.default_surface
    stacks = _pair_stacks(names, catalog)
    ground = [n for n in names if n not in stacks]
    ground.sort(key=lambda n: (-_size(catalog, n).x * _size(catalog, n).y, n))

    rows: list[list[str]] = []
    for n in ground:
        w = _size(catalog, n).x
        if rows:
            row = rows[-1]
            used = sum(_size(catalog, m).x for m in row) + ROW_GAP_CM * len(row)
            if len(row) < MAX_PER_ROW and used + w <= ROW_FILL * width:
                row.append(n)
                continue
        rows.append([n])

    statements: list[Statement] = []
    mirror = variant % 2 == 0
    heads = []
    for r, row in enumerate(rows):
        head = row[0]
        heads.append(head)
        if r == 0:
            statements.append(Statement("anchor", (head,)))
            statements.append(Statement("central_column", (head,)))
        else:
            statements.append(Statement("below_of", (head, heads[r - 1])))
        ends = {"right_of": head, "left_of": head}
        for i, n in enumerate(row[1:]):
            side = ("right_of", "left_of")[(i + mirror) % 2]
            statements.append(Statement(side, (n, ends[side])))
            ends[side] = n
        if len(row) > 1:
            statements.append(Statement("aligned_in_x_axis", tuple(sorted(row, key=lambda m: names.index(m)))))
    if len(rows) > 1:
        statements.append(Statement("near_front_edge", (heads[-1],)))
    for child, parent in stacks.items():
        statements.append(Statement("on_top_of", (child, parent)))
    return Plan(heads[0], rows, stacks, statements)


_SENTENCES = {
    "anchor": "{0} is the anchor object and sits in the middle of the arrangement.",
    "central_column": "{0} stays in the central column of the table (*x* axis).",
    "left_of": "{0} goes directly to the left of {1} (*x* axis).",
    "right_of": "{0} goes directly to the right of {1} (*x* axis).",
    "above_of": "{0} goes behind {1}, farther from the user (*y* axis).",
    "below_of": "{0} goes in front of {1}, closer to the user (*y* axis).",
    "on_top_of": "{0} rests on top of {1} (*z* axis), centered on it.",
    "near_front_edge": "{0} sits near the front edge of the table (*y* axis).",
}


def describe_plan(plan: Plan, instruction: str) -> str:
    lines = [
        f"Analysis: {instruction}",
        f"Groups: {len(plan.rows)} row(s) of objects on the surface"
        + (f", with {len(plan.stacks)} stacked pair(s)." if plan.stacks else "."),
        "Placement:",
    ]
    for s in plan.statements:
        if s.relation == "aligned_in_x_axis":
            lines.append("- These objects form one row with aligned centers (*x* axis): " + ", ".join(s.args) + ".")
        else:
            lines.append("- " + _SENTENCES[s.relation].format(*s.args))
    return "\n".join(lines)


def parse_statements(text: str, names: Iterable[str]) -> list[Statement]:
    """Recover plan statements from a description written by :func:`describe_plan`."""
    names = list(names)
    N = _name_pattern(names)
    out = []
    for line in text.splitlines():
        line = line.strip().lstrip("- ")
        if line.startswith("These objects form one row"):
            tail = line.split(":", 1)[1].strip().rstrip(".")
            members = tuple(m.strip() for m in tail.split(", ") if m.strip() in names)
            if len(members) >= 2:
                out.append(Statement("aligned_in_x_axis", members))
            continue
        for rel, template in _SENTENCES.items():
            pattern = re.escape(template).replace(re.escape("{0}"), N).replace(re.escape("{1}"), N)
            m = re.fullmatch(pattern, line)
            if m:
                out.append(Statement(rel, m.groups()))
                break
    return out


def lattice_from_statements(statements: list[Statement]) -> dict[str, tuple[int, int, int]]:
    anchor = next((s.args[0] for s in statements if s.relation == "anchor"), None)
    if anchor is None:
        return {}
    poses = {anchor: (0, 0, 0)}
    edges = [s for s in statements if s.relation in _OFFSETS]
    queue = deque([anchor])
    while queue:
        queue.popleft()
        for s in edges:
            a, b = s.args
            off = _OFFSETS[s.relation]
            if b in poses and a not in poses:
                poses[a] = tuple(p + o for p, o in zip(poses[b], off))
                queue.append(a)
            elif a in poses and b not in poses:
                poses[b] = tuple(p - o for p, o in zip(poses[a], off))
                queue.append(b)
    return poses


def relation_lines(statements: list[Statement]) -> list[str]:
    lines = []
    for s in statements:
        if s.relation == "anchor":
            continue
        lines.append(f"{s.relation}(" + ", ".join(f"'{a}'" for a in s.args) + ")")
        if s.relation == "on_top_of":
            lines.append(f"align_z-axis_at_center('{s.args[0]}', '{s.args[1]}')")
    return lines


def _pose_lines(poses: dict) -> str:
    return "\n".join(f"{n}: [{p[0]}, {p[1]}, {p[2]}]" for n, p in poses.items())


# ---------------------------------------------------------------- relation synthesis


def guess_relation(name: str) -> dict:
    """Infer a relation's type and direction from the words in its name."""
    tokens = set(re.split(r"[^a-z]+", name.lower()))
    if tokens & {"align", "aligned", "row", "column"} and not tokens & {"central", "center"}:
        return {"type": "Nary", "definition": f"The objects are aligned ({name}).", "mode": "center_x"}
    if tokens & {"central", "center", "edge", "corner", "middle"}:
        return {"type": "Unary", "definition": f"The object is placed at a surface zone ({name}).",
                "zone": "near_front_edge" if "edge" in tokens else "central_column"}
    rpc = [0, 0, 0]
    if tokens & {"left"}:
        rpc[0] = -1
    if tokens & {"right"}:
        rpc[0] = 1
    if tokens & {"above", "behind", "back"}:
        rpc[1] = 1
    if tokens & {"below", "front"}:
        rpc[1] = -1
    if tokens & {"top", "on", "over"}:
        rpc = [0, 0, 1]
    if tokens & {"under", "beneath", "underneath"}:
        rpc = [0, 0, -1]
    return {"type": "Binary", "definition": f"Obj_A relative to Obj_B ({name}).", "RPC": rpc}


def _constraint_for(guess: dict) -> dict:
    if guess["type"] == "Nary":
        return {"align_mode": guess["mode"], "falloff_frac": 0.02}
    if guess["type"] == "Unary":
        return {"anchor_zone": guess["zone"]}
    rpc = guess["RPC"]
    planar = [a for a, v in zip("xy", rpc[:2]) if v]
    if rpc[2]:
        return {"primary_axis": "z", "falloff_frac": 0.01}
    if len(planar) == 1:
        cross = "y" if planar[0] == "x" else "x"
        return {"primary_axis": planar[0], "overlap_axis": cross, "require_overlap": True}
    return {"primary_axis": "xy", "max_gap_frac": 0.2 if not planar else 0.06}


# ---------------------------------------------------------------- policies


@dataclass
class HeuristicPolicy:
    """Scripted planner answering every bundled template deterministically."""

    catalog: SizeCatalog = field(default_factory=SizeCatalog.bundled)
    judge: tuple[int, int] = (75, 70)
    name: str = "mock:heuristic"

    def __call__(self, req: ChatRequest) -> str:
        prompt = req.prompt
        tid = identify_template(prompt)
        handler = getattr(self, f"_{tid}", None) if tid else None
        if handler is None:
            return "I cannot help with that request."
        return handler(prompt)

    def _rrg_describe(self, prompt: str) -> str:
        names = _names_field(prompt, "Object List")
        m = re.search(r"independent sample (\d+)", prompt)
        plan = plan_scene(names, self.catalog, int(m.group(1)) if m else 1)
        text = describe_plan(plan, _field(prompt, "Task Instruction") or "")
        return "Here is the arrangement.\n" + wrap_block(text, "</Description>")

    def _rrg_critique(self, prompt: str) -> str:
        from .slow import mentioned_objects

        names = _names_field(prompt, "Object List")
        desc = _field(prompt, "Description") or ""
        missing = [n for n in names if n not in mentioned_objects(desc, names)]
        if not missing:
            return wrap_block("True", "</output>")
        issues = "\n".join(f"{i}. {n} is not described." for i, n in enumerate(missing, 1))
        return wrap_block(issues, "</issue>") + "\n" + wrap_block("False", "</output>")

    def _fast_poses(self, prompt: str) -> str:
        names = _names_field(prompt, "Object List")
        statements = parse_statements(_field(prompt, "Scene Description") or "", names)
        return wrap_block(_pose_lines(lattice_from_statements(statements)), "</pose>")

    def _fast_relations(self, prompt: str) -> str:
        names = _names_field(prompt, "Object List")
        statements = parse_statements(_field(prompt, "Scene Description") or "", names)
        return wrap_block("\n".join(relation_lines(statements)), "</relationships>")

    def _fast_repair(self, prompt: str) -> str:
        target = _names_field(prompt, "Missing object")[0]
        ctx = re.search(r"\):\n(.*?)\n\nRelation library:", prompt, re.S)
        placed = {}
        for line in (ctx.group(1) if ctx else "").splitlines():
            n, _, coords = line.rpartition(": ")
            placed[n] = tuple(int(v) for v in coords.strip("[]").split(","))
        desc = _field(prompt, "Scene Description") or ""
        statements = parse_statements(desc, list(placed) + [target])
        anchor = next((n for n, p in placed.items() if p == (0, 0, 0)), None)
        pose, links = None, []
        for s in statements:
            if target not in s.args or s.relation not in _OFFSETS:
                continue
            a, b = s.args
            other = b if a == target else a
            if other not in placed:
                continue
            off = _OFFSETS[s.relation]
            sign = 1 if a == target else -1
            cand = tuple(p + sign * o for p, o in zip(placed[other], off))
            if pose is None:
                pose = cand
            if cand == pose:
                links.extend(relation_lines([s]))
        if pose is None:
            taken = set(placed.values())
            pose = next((x, y, 0) for r in range(1, 20) for x in range(-r, r + 1) for y in (0, -r, r)
                        if (x, y, 0) not in taken)
            links = [f"near_of('{target}', '{anchor}')"]
        body = _pose_lines({target: pose})
        return wrap_block(body, "</pose>") + "\n" + wrap_block("\n".join(links), "</relationships>")

    def _arl_define(self, prompt: str) -> str:
        name = prompt.split("## Relation to complete\n", 1)[-1].split("\n", 1)[0].strip()
        g = guess_relation(name)
        entry = {k: v for k, v in g.items() if k in ("type", "definition", "RPC")}
        return wrap_block(json.dumps({name: entry}), "</new_relationship>")

    def _arl_constraint(self, prompt: str) -> str:
        name = _field(prompt, "relationship name") or ""
        return wrap_block(json.dumps(_constraint_for(guess_relation(name))), "</func>")

    def _arl_validation(self, prompt: str) -> str:
        return wrap_block(json.dumps({"tolerance_frac": 1.5, "max_adjustments": 3}), "</func>")

    def _judge_pos_ali(self, prompt: str) -> str:
        pos, ali = self.judge
        return wrap_block(f"Pos: {pos}\nAli: {ali}", "</score>")


@dataclass
class ScriptedPolicy:
    """Wraps a base policy with canned replies and targeted faults for tests.

    ``replies`` maps a template id to a list of replies consumed in order
    (falling back to ``base`` once exhausted). ``omit`` drops objects from the
    discrete-pose answer; ``break_repair`` makes every repair reply unusable.
    """

    base: Callable[[ChatRequest], str] = field(default_factory=HeuristicPolicy)
    replies: dict[str, list[str]] = field(default_factory=dict)
    omit: tuple[str, ...] = ()
    break_repair: bool = False
    name: str = "mock:scripted"
    calls: list[str] = field(default_factory=list)

    def __call__(self, req: ChatRequest) -> str:
        tid = identify_template(req.prompt)
        self.calls.append(tid or "unknown")
        queue = self.replies.get(tid)
        if queue:
            return queue.pop(0)
        if tid == "fast_repair" and self.break_repair:
            return "I could not place it."
        text = self.base(req)
        if tid == "fast_poses" and self.omit:
            kept = [ln for ln in text.splitlines() if ln.rpartition(":")[0].strip() not in self.omit]
            text = "\n".join(kept)
        return text


_POLICIES: dict[str, Callable[[], Callable[[ChatRequest], str]]] = {
    "heuristic": HeuristicPolicy,
}


def get_policy(name: str) -> Callable[[ChatRequest], str]:
    try:
        return _POLICIES[name]()
    except KeyError:
        raise KeyError(f"unknown mock policy {name!r}; known: {', '.join(_POLICIES)}") from None
