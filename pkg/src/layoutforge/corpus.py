"""Test-case corpus loading and the default object size catalog."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .geometry import Boundary, ObjectSpec, SceneSpec, Vec3

_INSTANCE_SUFFIX = re.compile(r"-\d+$")
_TRAILING_COMMA = re.compile(r",(\s*[\]}])")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusScenario:
    key: str
    scene: str
    info: str
    cases: tuple[tuple[str, ...], ...]

    def instruction(self) -> str:
        return f"Set up the {self.scene.lower()}. {self.info}."


def base_category(name: str) -> str:
    return _INSTANCE_SUFFIX.sub("", name)


def _data_text(name: str) -> str:
    return resources.files("layoutforge").joinpath("data", name).read_text(encoding="utf-8")


def load_corpus(path=None) -> list[CorpusScenario]:
    """Parse a corpus file in the appendix layout; the bundled corpus when ``path`` is None.

    Trailing commas are tolerated and both "case" and "cases" are accepted.
    """
    text = _data_text("corpus.json") if path is None else Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(_TRAILING_COMMA.sub(r"\1", text))
    except json.JSONDecodeError as e:
        raise CorpusError(f"corpus: malformed JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(doc, dict) or not doc:
        raise CorpusError("corpus: top level must be a non-empty object of scenarios")
    out = []
    for key, raw in doc.items():
        where = f"corpus.{key}"
        if not isinstance(raw, dict):
            raise CorpusError(f"{where}: expected an object")
        cases = raw.get("cases", raw.get("case"))
        if not isinstance(cases, list) or not cases:
            raise CorpusError(f"{where}: missing 'case' list")
        parsed = []
        for i, case in enumerate(cases):
            if not isinstance(case, list) or not case or not all(isinstance(n, str) and n for n in case):
                raise CorpusError(f"{where}.case[{i}]: expected a non-empty list of object names")
            if len(set(case)) != len(case):
                raise CorpusError(f"{where}.case[{i}]: duplicate object names")
            parsed.append(tuple(case))
        for field_name in ("scene", "info"):
            if not isinstance(raw.get(field_name), str):
                raise CorpusError(f"{where}.{field_name}: expected a string")
        out.append(CorpusScenario(key, raw["scene"], raw["info"], tuple(parsed)))
    return out


def find_scenario(scenarios: list[CorpusScenario], key: str) -> CorpusScenario:
    for s in scenarios:
        if s.key == key:
            return s
    raise KeyError(f"unknown scenario {key!r}; known: {', '.join(s.key for s in scenarios)}")


class SizeCatalog:
    """Category -> default size; instance names like "cup-0" resolve through their base category."""

    def __init__(self, sizes: dict[str, Vec3], default_surface: tuple[float, float] = (120.0, 60.0)):
        self.sizes = dict(sizes)
        self.default_surface = default_surface

    @classmethod
    def bundled(cls) -> "SizeCatalog":
        return cls.from_json(_data_text("sizes.json"))

    @classmethod
    def from_json(cls, text: str) -> "SizeCatalog":
        doc = json.loads(text)
        sizes = {k: Vec3.of(v) for k, v in doc["sizes"].items()}
        return cls(sizes, tuple(doc.get("default_surface", (120.0, 60.0))))

    def __contains__(self, name: str) -> bool:
        return base_category(name) in self.sizes or name in self.sizes

    def size_of(self, name: str) -> Vec3:
        if name in self.sizes:
            return self.sizes[name]
        try:
            return self.sizes[base_category(name)]
        except KeyError:
            raise KeyError(f"no catalog size for {name!r}") from None

    def boundary(self) -> Boundary:
        return Boundary(*self.default_surface)


def build_scene(scenario: CorpusScenario, case_index: int, catalog: SizeCatalog | None = None,
                boundary: Boundary | None = None, seed: int = 0) -> SceneSpec:
    if not 0 <= case_index < len(scenario.cases):
        raise IndexError(f"{scenario.key} has {len(scenario.cases)} cases, got index {case_index}")
    catalog = catalog or SizeCatalog.bundled()
    objects = [ObjectSpec(n, catalog.size_of(n), base_category(n)) for n in scenario.cases[case_index]]
    return SceneSpec(scenario.instruction(), tuple(objects), boundary or catalog.boundary(), seed)
