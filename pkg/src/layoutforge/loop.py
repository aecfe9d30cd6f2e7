"""Closed loop: Stage-1 sampling, GA grounding, relation validation and conservative library adjustment."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

from .fast import NoAnchor, PoseParseError, RelationParseError, TopoRelationSet, run_stage1
from .geometry import Boundary, Layout, SceneSpec
from .grounding import GroundingConfig, GroundingError, GroundingResult, build_support_graph, ground
from .llm import LLMError, TagNotFound
from .metrics import MetricsReport, evaluate_layout
from .relations import (
    RelationInstance,
    RelationLibrary,
    SynthesisFailed,
    adjust_parameters,
    diagnose,
    relation_to_dict,
    validate,
)
from .slow import CritiqueParseError

log = logging.getLogger(__name__)

# model-output problems that spoil one round but not the run
_ROUND_ERRORS = (NoAnchor, PoseParseError, RelationParseError, SynthesisFailed, TagNotFound, CritiqueParseError,
                 GroundingError)


@dataclass(frozen=True)
class LoopConfig:
    max_rounds: int = 5
    max_adjustments_per_relation: int = 3
    regrounds_per_round: int = 2
    rrg_iters: int = 3

    def __post_init__(self):
        for name in ("max_rounds", "max_adjustments_per_relation", "regrounds_per_round", "rrg_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class Adjustment:
    round: int
    relation: str
    evidence: str
    old: dict
    new: dict


@dataclass
class RunReport:
    solved: bool
    rounds_used: int
    final_layout: Layout | None
    surviving_relations: TopoRelationSet
    adjustments: list[Adjustment] = field(default_factory=list)
    metrics: MetricsReport | None = None
    fingerprints: list[str] = field(default_factory=list)
    failed_relations: list[RelationInstance] = field(default_factory=list)
    library: RelationLibrary | None = None
    rounds: list[dict] = field(default_factory=list)
    diagnostic: str | None = None
    aborted: bool = False

    def to_dict(self) -> dict:
        lib = self.library
        return {
            "solved": self.solved,
            "rounds_used": self.rounds_used,
            "aborted": self.aborted,
            "diagnostic": self.diagnostic,
            "surviving_relations": [str(r) for r in self.surviving_relations.relations],
            "dropped_relations": [[str(r), why] for r, why in self.surviving_relations.dropped],
            "failed_relations": [str(r) for r in self.failed_relations],
            "adjustments": [asdict(a) for a in self.adjustments],
            "rounds": self.rounds,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "non_builtin_relations": [
                dict(relation_to_dict(d), provenance=lib.provenance[n])
                for n, d in lib.entries.items() if lib.provenance[n] != "builtin"
            ] if lib else [],
            "fingerprints": list(self.fingerprints),
        }


def validate_layout(layout: Layout, R, lib: RelationLibrary, boundary: Boundary) -> list[RelationInstance]:
    """Relations failing their widened validator, in input order."""
    return [inst for inst in R if not validate(inst, layout, boundary, lib)]


def _physical_ok(g: GroundingResult) -> bool:
    b = g.breakdown
    return b.collision_score == 1.0 and b.boundary_score == 1.0 and b.stability_score == 1.0


def _params(d) -> dict:
    return {"max_gap_frac": d.constraint.max_gap_frac, "tolerance_frac": d.validation.tolerance_frac,
            "revision": d.revision}


def run_closed_loop(scene: SceneSpec, lib: RelationLibrary, gateway, loop_cfg: LoopConfig | None = None,
                    ground_cfg: GroundingConfig | None = None) -> RunReport:
    loop_cfg = loop_cfg or LoopConfig()
    ground_cfg = ground_cfg or GroundingConfig()
    adjustments: list[Adjustment] = []
    rounds: list[dict] = []
    best = None  # (key, grounding, relations, failed)

    def report(solved, rnd, diagnostic=None, aborted=False):
        layout = best[1].layout if best else None
        R = best[2] if best else TopoRelationSet()
        failed = best[3] if best else []
        metrics = evaluate_layout(layout, scene.boundary, scene.names) if layout is not None else None
        return RunReport(solved, rnd, layout, R, adjustments, metrics, list(gateway.fingerprints), failed,
                         lib, rounds, diagnostic, aborted)

    for rnd in range(1, loop_cfg.max_rounds + 1):
        summary = {"round": rnd, "status": "unsolved", "groundings": 0, "failed": []}
        rounds.append(summary)
        try:
            st = run_stage1(scene, lib, gateway, sample=rnd, rrg_iters=loop_cfg.rrg_iters)
            lib = st.library
            R = st.relations
            support = build_support_graph(R, scene, lib)
        except _ROUND_ERRORS as e:
            summary["status"] = f"stage-1 failed: {e}"
            log.warning("round %d: %s", rnd, summary["status"])
            continue
        except LLMError as e:
            summary["status"] = f"aborted: {e}"
            return report(False, rnd, f"gateway error: {e}", aborted=True)
        summary["repaired"] = sorted(st.repaired)

        for attempt in range(loop_cfg.regrounds_per_round + 1):
            cfg = ground_cfg.scaled(rng_seed=ground_cfg.rng_seed + 1000 * (rnd - 1) + attempt)
            g = ground(st.poses, R.relations, lib, scene, cfg, support)
            summary["groundings"] += 1
            failed = validate_layout(g.layout, R.relations, lib, scene.boundary)
            physical = _physical_ok(g)
            b = g.breakdown
            key = (physical, b.collision_score + b.boundary_score + b.stability_score, -len(failed))
            if best is None or key > best[0]:
                best = (key, g, R, failed)
            summary["failed"] = [str(f) for f in failed]
            if not failed and physical:
                summary["status"] = "solved"
                return report(True, rnd)
            if attempt == loop_cfg.regrounds_per_round:
                break
            for name in dict.fromkeys(f.relation for f in failed):
                entry = lib.get(name)
                budget = min(entry.validation.max_adjustments, loop_cfg.max_adjustments_per_relation)
                if entry.revision >= budget:
                    continue
                inst = next(f for f in failed if f.relation == name)
                evidence = diagnose(inst, g.layout, scene.boundary, lib)
                new = adjust_parameters(entry, evidence)
                lib = lib.with_entry(new, "adjusted")
                adjustments.append(Adjustment(rnd, name, evidence.kind, _params(entry), _params(new)))
                log.info("round %d: adjusted %s (%s)", rnd, name, evidence.kind)
    return report(False, loop_cfg.max_rounds, "no solution within the round budget")
