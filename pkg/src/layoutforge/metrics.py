"""Layout evaluation: collision-free, in-boundary, functional completeness and the PSF aggregate."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Iterable

from .geometry import Boundary, Layout, iou, is_stacking_pair, footprint_contains

DEFAULT_TAU = 0.01
JUDGE_TAG = "</score>"
_SCORE = re.compile(r"\b(Pos|Ali)\.?\s*[:=]\s*(\d+(?:\.\d+)?)", re.I)


class JudgeUnparseable(ValueError):
    pass


def collision_free_score(layout: Layout, tau: float = DEFAULT_TAU) -> tuple[float, float, float]:
    """(cf, rho, mean_iou) over all unordered pairs; pairs with IoU > tau collide."""
    names = layout.names
    n = len(names)
    if n < 1:
        raise ValueError("collision_free_score needs at least one object")
    M = n * (n - 1) // 2
    hits = []
    for i in range(n):
        for j in range(i + 1, n):
            v = iou(layout.boxes[names[i]], layout.boxes[names[j]])
            if v > tau:
                hits.append(v)
    if M == 0:
        return 1.0, 0.0, 0.0
    C = len(hits)
    return 1.0 - C / M, C / M, (sum(hits) / C if C else 0.0)


@dataclass(frozen=True)
class BoundaryCounts:
    n_objects: int
    out_of_bounds: int  # V_T
    stacking_pairs: int  # S
    unstable_pairs: int  # V_S

    @property
    def violation_ratio(self) -> float:
        return (self.out_of_bounds + self.unstable_pairs) / (self.n_objects + self.stacking_pairs)

    @property
    def ib(self) -> float:
        return 1.0 - self.violation_ratio


def boundary_counts(layout: Layout, boundary: Boundary) -> BoundaryCounts:
    names = layout.names
    if not names:
        raise ValueError("in_boundary_score needs at least one object")
    (x0, y0), (x1, y1) = boundary.min_xy, boundary.max_xy
    v_t = sum(
        1 for b in layout.boxes.values()
        if b.min.x < x0 or b.max.x > x1 or b.min.y < y0 or b.max.y > y1 or b.min.z < boundary.surface_z
    )
    s = v_s = 0
    for i, a in enumerate(names):
        for c in names[i + 1:]:
            ba, bc = layout.boxes[a], layout.boxes[c]
            if not is_stacking_pair(ba, bc):
                continue
            s += 1
            bottom, top = (ba, bc) if ba.max.z <= bc.min.z else (bc, ba)
            if not footprint_contains(bottom, top):
                v_s += 1
    return BoundaryCounts(len(names), v_t, s, v_s)


def in_boundary_score(layout: Layout, boundary: Boundary) -> float:
    return boundary_counts(layout, boundary).ib


def functional_completeness(requested: Iterable[str], layout: Layout) -> float:
    requested = list(requested)
    if not requested:
        raise ValueError("requested object list is empty")
    placed = set(layout.names)
    return sum(1 for n in requested if n in placed) / len(requested)


def psf(cf: float, ib: float, pos: float, ali: float, fc: float) -> float:
    """Weighted aggregate on percent inputs."""
    for v in (cf, ib, pos, ali, fc):
        if not 0 <= v <= 100:
            raise ValueError(f"psf inputs are percents in [0, 100], got {v}")
    return 0.4 * ((cf + ib) / 2) + 0.3 * ((pos + ali) / 2) + 0.3 * fc


def pct(x: float) -> float:
    return round(100.0 * x, 1)


@dataclass(frozen=True)
class MetricsReport:
    cf: float
    ib: float
    mean_iou: float
    rho: float
    fc: float
    pos: float | None = None
    ali: float | None = None
    psf: float | None = None
    ib_violation_ratio: float = 0.0

    def __post_init__(self):
        for name in ("cf", "ib", "fc", "pos", "ali", "psf"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 100:
                raise ValueError(f"{name} must be a percent, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        return cls(**{k: raw.get(k) for k in cls.__dataclass_fields__ if k in raw})


def evaluate_layout(layout: Layout, boundary: Boundary, requested: Iterable[str], tau: float = DEFAULT_TAU,
                    pos: float | None = None, ali: float | None = None) -> MetricsReport:
    requested = list(requested)
    if len(layout):
        cf, rho, mean_iou = collision_free_score(layout, tau)
        counts = boundary_counts(layout, boundary)
        ib, ratio = counts.ib, counts.violation_ratio
    else:
        cf, rho, mean_iou, ib, ratio = 1.0, 0.0, 0.0, 1.0, 0.0
    fc = functional_completeness(requested, layout)
    cf_p, ib_p, fc_p = pct(cf), pct(ib), pct(fc)
    score = None
    if pos is not None and ali is not None:
        score = round(psf(100 * cf, 100 * ib, pos, ali, 100 * fc), 1)
    return MetricsReport(cf_p, ib_p, mean_iou, rho, fc_p, pos, ali, score, ratio)


def parse_judge(reply: str) -> tuple[float, float]:
    from .llm import TagNotFound, parse_tagged_block

    try:
        block = parse_tagged_block(reply, JUDGE_TAG)
    except TagNotFound:
        block = reply
    found = {k.lower(): float(v) for k, v in _SCORE.findall(block)}
    if set(found) != {"pos", "ali"} or not all(0 <= v <= 100 for v in found.values()):
        raise JudgeUnparseable("judge unparseable")
    return found["pos"], found["ali"]


def semantic_scores_llm(scene_render: str, instruction: str, gateway, retries: int = 2) -> tuple[float, float]:
    """Ask the judge model for Pos./Ali. scores of a rendered layout."""
    from .llm import render_template

    prompt = render_template("judge_pos_ali", {"<task_instruction>": instruction, "<scene_render>": scene_render})
    for attempt in range(retries + 1):
        text = prompt if attempt == 0 else (
            f"{prompt}\n\nAttempt {attempt + 1}: reply with exactly `Pos: N` and `Ali: N` between two {JUDGE_TAG} tokens."
        )
        try:
            return parse_judge(gateway.ask(text))
        except JudgeUnparseable:
            continue
    raise JudgeUnparseable("judge unparseable")
