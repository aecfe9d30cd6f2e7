"""Tabletop layout synthesis: LLM scene reasoning, relation extraction, GA grounding and closed-loop validation."""

from .geometry import Aabb, Boundary, Layout, ObjectSpec, Pose, SceneSpec, Vec3
from .grounding import GroundingConfig, ground
from .llm import Gateway, Live, Mock, Record, Replay
from .loop import LoopConfig, RunReport, run_closed_loop
from .metrics import MetricsReport, evaluate_layout, psf
from .relations import RelationInstance, RelationLibrary, builtin_library

__version__ = "0.1.0"

__all__ = [
    "Aabb", "Boundary", "Layout", "ObjectSpec", "Pose", "SceneSpec", "Vec3",
    "GroundingConfig", "ground", "Gateway", "Live", "Mock", "Record", "Replay",
    "LoopConfig", "RunReport", "run_closed_loop", "MetricsReport", "evaluate_layout", "psf",
    "RelationInstance", "RelationLibrary", "builtin_library",
]
