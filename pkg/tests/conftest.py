from pathlib import Path

import pytest
from hypothesis import settings

from layoutforge.corpus import SizeCatalog, build_scene, find_scenario, load_corpus
from layoutforge.geometry import Aabb, Boundary, Layout, ObjectSpec, SceneSpec, Vec3
from layoutforge.relations import builtin_library

FIXTURES = Path(__file__).parent / "fixtures"
CASSETTES = FIXTURES / "cassettes"
FIXTURE_SEED = 7

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def box(lo, hi) -> Aabb:
    return Aabb(Vec3.of(lo), Vec3.of(hi))


def layout_of(boxes: dict) -> Layout:
    return Layout.from_boxes({n: box(*b) for n, b in boxes.items()})


def scene_of(names, boundary=None, sizes=None, instruction="Arrange the objects.") -> SceneSpec:
    cat = SizeCatalog.bundled()
    objs = []
    for n in names:
        size = Vec3.of(sizes[n]) if sizes and n in sizes else cat.size_of(n)
        objs.append(ObjectSpec(n, size, n))
    return SceneSpec(instruction, tuple(objs), boundary or Boundary(120.0, 60.0))


@pytest.fixture
def lib():
    return builtin_library()


@pytest.fixture
def table():
    return Boundary(120.0, 60.0)


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture
def dining_scene(corpus):
    return build_scene(find_scenario(corpus, "Dining_Table"), 0, seed=FIXTURE_SEED)
