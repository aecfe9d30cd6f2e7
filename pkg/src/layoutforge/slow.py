"""Slow system: reasoning / reflection / generation loop for the scene description."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable

from .geometry import SceneSpec
from .llm import TagNotFound, parse_tagged_block, render_template
from .relations import RelationLibrary

log = logging.getLogger(__name__)

DESCRIPTION_TAG = "</Description>"
ISSUE_TAG = "</issue>"
VERDICT_TAG = "</output>"
_NUMBERING = re.compile(r"^\s*(?:[-*]|\d+[.)])\s*")


class CritiqueParseError(ValueError):
    pass


@dataclass(frozen=True)
class SceneDescription:
    text: str
    mentioned_objects: frozenset[str]
    iterations_used: int = 1
    approved: bool = False


@dataclass(frozen=True)
class CritiqueResult:
    approved: bool
    issues: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.approved and self.issues:
            raise ValueError("an approved critique carries no issues")


def object_list_text(names: Iterable[str]) -> str:
    return json.dumps(list(names))


def mentioned_objects(text: str, names: Iterable[str]) -> frozenset[str]:
    """Names occurring verbatim in ``text``.

    Longer names are matched and blanked first so "cup" is not found inside
    "cup saucer" or "cup-0".
    """
    found = set()
    for name in sorted(set(names), key=len, reverse=True):
        pattern = re.compile(r"(?<![\w-])" + re.escape(name) + r"(?![\w]|-\d)")
        if pattern.search(text):
            found.add(name)
            text = pattern.sub(" ", text)
    return frozenset(found)


def generate_description(scene: SceneSpec, lib: RelationLibrary, gateway,
                         corrections: Iterable[str] = (), sample: int = 1) -> SceneDescription:
    prompt = render_template("rrg_describe", {
        "<obj_list>": object_list_text(scene.names),
        "<task_instruction>": scene.instruction,
        "<relationship_library>": lib.describe(),
    })
    corrections = list(corrections)
    if corrections:
        prompt += "\n\nA reviewer found these problems in your previous description. Fix all of them:\n"
        prompt += "\n".join(f"{i}. {c}" for i, c in enumerate(corrections, 1))
    if sample > 1:
        prompt += f"\n\nThis is independent sample {sample}; propose a fresh arrangement."
    text = parse_tagged_block(gateway.ask(prompt), DESCRIPTION_TAG)
    return SceneDescription(text, mentioned_objects(text, scene.names))


def parse_critique(reply: str) -> CritiqueResult:
    verdict = parse_tagged_block(reply, VERDICT_TAG).strip().lower()
    if verdict not in ("true", "false"):
        raise CritiqueParseError(f"critique verdict is not a boolean: {verdict!r}")
    if verdict == "true":
        return CritiqueResult(True)
    try:
        block = parse_tagged_block(reply, ISSUE_TAG)
    except TagNotFound:
        block = ""
    issues = tuple(_NUMBERING.sub("", line).strip() for line in block.splitlines() if line.strip())
    return CritiqueResult(False, issues)


def critique_description(scene: SceneSpec, desc: SceneDescription, gateway) -> CritiqueResult:
    prompt = render_template("rrg_critique", {
        "<obj_list>": object_list_text(scene.names),
        "<task_instruction>": scene.instruction,
        "<description>": desc.text,
    })
    return parse_critique(gateway.ask(prompt))


def rrg(scene: SceneSpec, lib: RelationLibrary, gateway, max_iters: int = 3, sample: int = 1) -> SceneDescription:
    """Generate, critique and regenerate until a complete description is approved.

    Returns the last candidate with ``approved=False`` when ``max_iters`` passes
    all fail; the caller decides whether to continue.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    issues: list[str] = []
    desc = None
    for it in range(1, max_iters + 1):
        desc = generate_description(scene, lib, gateway, issues, sample)
        verdict = critique_description(scene, desc, gateway)
        missing = [n for n in scene.names if n not in desc.mentioned_objects]
        if verdict.approved and not missing:
            return SceneDescription(desc.text, desc.mentioned_objects, it, True)
        issues = list(verdict.issues)
        if missing:
            issues.append("These objects are not described: " + ", ".join(missing))
        log.info("rrg iteration %d rejected: %s", it, issues)
    return SceneDescription(desc.text, desc.mentioned_objects, max_iters, False)
