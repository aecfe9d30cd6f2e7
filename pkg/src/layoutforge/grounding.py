"""Stage-2 grounding: a genetic algorithm over top-left pixel corners.

Genomes are integer arrays of shape (n, 2) in scene-object order; a population
is a (P, n, 2) array. Fitness is computed for the whole population at once and
converts corners to centimeter boxes with the same arithmetic :func:`to_bbox`
uses, so a genome certified full here yields exactly the same boxes later.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .geometry import Aabb, Layout, Pose, SceneSpec, Vec3
from .relations import RelationInstance, RelationLibrary, score_batch

log = logging.getLogger(__name__)

MID_GAP_FRAC = 0.035
INIT_FILL = 0.9


class GroundingError(ValueError):
    pass


@dataclass(frozen=True)
class GroundingConfig:
    plane_w: int = 600
    plane_h: int = 300
    population: int = 2000
    generations: int = 100
    mutation_ratio: float = 0.3
    elite_frac: float = 0.5
    gaussian_sigma_px: float = 8.0
    rng_seed: int = 0
    physical_weight: float = 1.0
    semantic_weight: float = 1.0
    clearance_px: int = 1

    def __post_init__(self):
        if self.plane_w <= 0 or self.plane_h <= 0:
            raise ValueError("plane dimensions must be positive")
        if self.population < 2 or self.population % 2:
            raise ValueError(f"population must be even and >= 2, got {self.population}")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0 < self.elite_frac < 1:
            raise ValueError("elite_frac must lie in (0, 1)")
        if not 0 <= self.mutation_ratio <= 1:
            raise ValueError("mutation_ratio must lie in [0, 1]")
        if self.gaussian_sigma_px <= 0:
            raise ValueError("gaussian_sigma_px must be positive")
        if self.physical_weight < 0 or self.semantic_weight < 0:
            raise ValueError("weights must be non-negative")
        if self.clearance_px < 0:
            raise ValueError("clearance_px must be >= 0")

    def scaled(self, **kw) -> "GroundingConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class SupportGraph:
    edges: Mapping[str, str]  # child -> parent
    z_level: Mapping[str, float]

    def ancestors(self, name: str) -> list[str]:
        out = []
        while name in self.edges:
            name = self.edges[name]
            out.append(name)
        return out

    def depth(self, name: str) -> int:
        return len(self.ancestors(name))


def build_support_graph(R: Iterable[RelationInstance], scene: SceneSpec,
                        lib: RelationLibrary | None = None) -> SupportGraph:
    """Derive child -> parent edges from vertical relations and stack z levels."""
    edges: dict[str, str] = {}
    for inst in R:
        rpc = None
        if lib is not None and inst.relation in lib:
            d = lib.get(inst.relation)
            rpc = d.rpc if d.kind == "Relative" else None
        elif inst.relation == "on_top_of":
            rpc = (0, 0, 1)
        if rpc is None or rpc[2] == 0 or len(inst.args) != 2:
            continue
        child, parent = inst.args if rpc[2] > 0 else inst.args[::-1]
        if edges.get(child, parent) != parent:
            raise GroundingError(f"{child} has more than one supporter: {edges[child]}, {parent}")
        edges[child] = parent
    for start in edges:
        seen = [start]
        node = start
        while node in edges:
            node = edges[node]
            if node in seen:
                cycle = seen[seen.index(node):] + [node]
                raise GroundingError("stacking cycle: " + " -> ".join(cycle))
            seen.append(node)
    sizes = scene.sizes()
    z: dict[str, float] = {}

    def level(n):
        if n not in z:
            z[n] = scene.boundary.surface_z if n not in edges else level(edges[n]) + sizes[edges[n]].z
        return z[n]

    for n in scene.names:
        level(n)
    return SupportGraph(dict(edges), z)


@dataclass(frozen=True)
class Genome:
    corners: Mapping[str, tuple[int, int]]

    @classmethod
    def from_array(cls, names: list[str], arr) -> "Genome":
        return cls({n: (int(arr[i, 0]), int(arr[i, 1])) for i, n in enumerate(names)})

    def to_array(self, names: list[str]) -> np.ndarray:
        return np.array([self.corners[n] for n in names], dtype=np.int64)


@dataclass(frozen=True)
class FitnessBreakdown:
    collision_score: float
    boundary_score: float
    stability_score: float
    relation_scores: Mapping[RelationInstance, float]
    total: float
    is_full: bool


class Problem:
    """Precomputed arrays shared by every fitness evaluation of one grounding run."""

    def __init__(self, scene: SceneSpec, R: Iterable[RelationInstance], lib: RelationLibrary,
                 support: SupportGraph, cfg: GroundingConfig):
        self.scene, self.cfg, self.support = scene, cfg, support
        self.names = scene.names
        index = {n: i for i, n in enumerate(self.names)}
        b = scene.boundary
        self.boundary = b
        self.sx, self.sy = cfg.plane_w / b.width, cfg.plane_h / b.depth
        size = np.array([scene.object(n).size.as_tuple() for n in self.names])
        self.size_cm = size
        self.w_px, self.h_px = size[:, 0] * self.sx, size[:, 1] * self.sy
        too_big = [n for n, w, h in zip(self.names, self.w_px, self.h_px) if w > cfg.plane_w or h > cfg.plane_h]
        if too_big:
            raise GroundingError(f"object larger than surface: {', '.join(too_big)}")
        self.max_x = np.floor(cfg.plane_w - self.w_px).astype(np.int64)
        self.max_y = np.floor(cfg.plane_h - self.h_px).astype(np.int64)
        self.z = np.array([support.z_level[n] for n in self.names])

        n = len(self.names)
        exempt = np.zeros((n, n), dtype=bool)
        for c in self.names:
            for a in support.ancestors(c):
                exempt[index[c], index[a]] = exempt[index[a], index[c]] = True
        iu, ju = np.triu_indices(n, 1)
        keep = ~exempt[iu, ju]
        self.pairs = (iu[keep], ju[keep])
        self.children = np.array([index[c] for c in support.edges], dtype=np.int64)
        self.parents = np.array([index[p] for p in support.edges.values()], dtype=np.int64)

        self.relations = list(R)
        self.rel_defs, self.rel_idx = [], []
        for inst in self.relations:
            missing = [a for a in inst.args if a not in index]
            if missing:
                raise KeyError(f"{inst}: objects not in scene: {missing}")
            self.rel_defs.append(lib.get(inst.relation))
            self.rel_idx.append(np.array([index[a] for a in inst.args]))
        self.full_score = cfg.physical_weight + (cfg.semantic_weight if self.relations else 0.0)

    def boxes(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(P, n, 3) min and max corners in cm for a population of pixel corners."""
        b = self.boundary
        G = np.asarray(G)
        x_min = b.origin_x + G[..., 0] / self.sx
        y_max = b.origin_y + b.depth - G[..., 1] / self.sy
        mins = np.stack([x_min, y_max - self.size_cm[:, 1], np.broadcast_to(self.z, x_min.shape)], axis=-1)
        maxs = np.stack([x_min + self.size_cm[:, 0], y_max, np.broadcast_to(self.z + self.size_cm[:, 2], x_min.shape)],
                        axis=-1)
        return mins, maxs

    def evaluate(self, G: np.ndarray) -> dict[str, np.ndarray]:
        G = np.asarray(G)
        squeeze = G.ndim == 2
        if squeeze:
            G = G[None]
        P = G.shape[0]
        mins, maxs = self.boxes(G)
        b = self.boundary

        i, j = self.pairs
        if len(i):
            clear = self.cfg.clearance_px
            ox = np.minimum(maxs[:, i, 0], maxs[:, j, 0]) - np.maximum(mins[:, i, 0], mins[:, j, 0]) + clear / self.sx
            oy = np.minimum(maxs[:, i, 1], maxs[:, j, 1]) - np.maximum(mins[:, i, 1], mins[:, j, 1]) + clear / self.sy
            area = (self.size_cm[:, 0] * self.size_cm[:, 1])
            ratio = np.clip(ox, 0, None) * np.clip(oy, 0, None) / np.minimum(area[i], area[j])
            collision = 1.0 - np.minimum(ratio, 1.0).mean(axis=1)
        else:
            collision = np.ones(P)

        inside = ((mins[..., 0] >= b.origin_x) & (maxs[..., 0] <= b.origin_x + b.width)
                  & (mins[..., 1] >= b.origin_y) & (maxs[..., 1] <= b.origin_y + b.depth))
        boundary = inside.mean(axis=1)

        if len(self.children):
            c, p = self.children, self.parents
            held = ((mins[:, c, 0] >= mins[:, p, 0]) & (maxs[:, c, 0] <= maxs[:, p, 0])
                    & (mins[:, c, 1] >= mins[:, p, 1]) & (maxs[:, c, 1] <= maxs[:, p, 1]))
            stability = held.mean(axis=1)
        else:
            stability = np.ones(P)

        if self.relations:
            rel = np.stack([score_batch(d, mins[:, idx], maxs[:, idx], b) for d, idx in zip(self.rel_defs, self.rel_idx)],
                           axis=1)
            semantic = rel.mean(axis=1)
            rel_full = (rel == 1.0).all(axis=1)
        else:
            rel = np.zeros((P, 0))
            semantic = np.zeros(P)
            rel_full = np.ones(P, dtype=bool)

        cfg = self.cfg
        total = cfg.physical_weight * (collision + boundary + stability) / 3 + cfg.semantic_weight * semantic
        full = (collision == 1.0) & (boundary == 1.0) & (stability == 1.0) & rel_full
        out = {"collision": collision, "boundary": boundary, "stability": stability, "relations": rel,
               "total": total, "full": full}
        if squeeze:
            out = {k: v[0] for k, v in out.items()}
        return out

    def breakdown(self, g: np.ndarray) -> FitnessBreakdown:
        e = self.evaluate(g)
        return FitnessBreakdown(
            collision_score=float(e["collision"]),
            boundary_score=float(e["boundary"]),
            stability_score=float(e["stability"]),
            relation_scores={inst: float(s) for inst, s in zip(self.relations, e["relations"])},
            total=float(e["total"]),
            is_full=bool(e["full"]),
        )

    def clamp(self, G: np.ndarray) -> np.ndarray:
        G[..., 0] = np.clip(G[..., 0], 0, self.max_x)
        G[..., 1] = np.clip(G[..., 1], 0, self.max_y)
        return G


def fitness(genome: Genome, scene: SceneSpec, R, lib: RelationLibrary, support: SupportGraph,
            cfg: GroundingConfig) -> FitnessBreakdown:
    problem = Problem(scene, R, lib, support, cfg)
    return problem.breakdown(genome.to_array(problem.names))


@dataclass
class Population:
    names: list[str]
    genomes: np.ndarray  # (P, n, 2) int64
    fitness: np.ndarray | None = None  # (P,) totals of the last evaluation

    def __post_init__(self):
        self.genomes = np.asarray(self.genomes, dtype=np.int64)
        if self.genomes.ndim != 3 or self.genomes.shape[1:] != (len(self.names), 2) or not len(self.genomes):
            raise ValueError(f"population array must be (P, {len(self.names)}, 2), got {self.genomes.shape}")
        if self.fitness is not None and len(self.fitness) != len(self.genomes):
            raise ValueError("fitness and genomes must have equal lengths")

    def __len__(self) -> int:
        return len(self.genomes)

    def genome(self, k: int) -> Genome:
        return Genome.from_array(self.names, self.genomes[k])


def _init_rng(cfg: GroundingConfig) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, 0])


def init_population(C, scene: SceneSpec, cfg: GroundingConfig, support: SupportGraph | None = None) -> Population:
    """Seed every genome from the lattice embedding plus uniform jitter.

    The lattice is laid out with a step of one mean footprint plus a
    mid-band gap, shrunk when needed so the whole extent fits inside the
    plane with a 5% margin, and centered on the plane.
    """
    support = support or build_support_graph((), scene)
    problem = Problem(scene, (), RelationLibrary(), support, cfg)
    b = scene.boundary
    lat = np.array([C.poses[n][:2] if n in C.poses else (0, 0) for n in problem.names], dtype=float)
    size = problem.size_cm
    centers = np.zeros((len(lat), 2))
    for axis, extent in ((0, b.width), (1, b.depth)):
        lo, hi = lat[:, axis].min(), lat[:, axis].max()
        step = size[:, axis].mean() + MID_GAP_FRAC * b.width
        span = hi - lo
        room = INIT_FILL * extent - size[:, axis].max()
        if span > 0 and span * step > room:
            step = max(room, 0.0) / span
        centers[:, axis] = extent / 2 + (lat[:, axis] - (lo + hi) / 2) * step
    cx_px = centers[:, 0] * problem.sx - problem.w_px / 2
    cy_px = (b.depth - centers[:, 1]) * problem.sy - problem.h_px / 2
    base = np.stack([cx_px, cy_px], axis=-1)
    rng = _init_rng(cfg)
    s = int(round(cfg.gaussian_sigma_px))
    jitter = rng.integers(-s, s + 1, size=(cfg.population, len(lat), 2))
    G = problem.clamp(np.rint(base[None] + jitter).astype(np.int64))
    return Population(problem.names, G)


@dataclass
class EvolveResult:
    best: Genome
    breakdown: FitnessBreakdown
    generations_used: int
    history: list[float] = field(default_factory=list)
    population: Population | None = None


_HASH_MULT = np.random.default_rng(20240521).integers(1, 2**62, size=4096, dtype=np.int64).astype(np.uint64) | np.uint64(1)


def content_hash(G: np.ndarray) -> np.ndarray:
    flat = np.asarray(G, dtype=np.int64).reshape(len(G), -1).astype(np.uint64)
    mult = _HASH_MULT[: flat.shape[1]]
    with np.errstate(over="ignore"):
        return (flat * mult).sum(axis=1) ^ (flat.sum(axis=1) * np.uint64(0x9E3779B97F4A7C15))


def rank(total: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Indices best first; equal totals are ordered by genome content hash."""
    return np.lexsort((content_hash(G), -total))


def evolve(pop: Population, problem: Problem, cfg: GroundingConfig | None = None) -> EvolveResult:
    cfg = cfg or problem.cfg
    rng = np.random.default_rng([cfg.rng_seed, 1])
    G = pop.genomes.copy()
    P, n, _ = G.shape
    n_elite = min(P - 1, max(1, int(round(P * cfg.elite_frac))))
    best, best_total = None, -np.inf
    history = []
    gen = 0
    for gen in range(1, cfg.generations + 1):
        ev = problem.evaluate(G)
        order = rank(ev["total"], G)
        G = G[order]
        total, full = ev["total"][order], ev["full"][order]
        if total[0] > best_total:
            best, best_total = G[0].copy(), float(total[0])
        history.append(best_total)
        if full[0] or gen == cfg.generations:
            break
        elites = G[:n_elite]
        k = P - n_elite
        pa = elites[rng.integers(0, n_elite, size=k)]
        pb = elites[rng.integers(0, n_elite, size=k)]
        take_a = rng.random((k, n)) < 0.5
        children = np.where(take_a[..., None], pa, pb)
        mutate = np.flatnonzero(rng.random(k) < cfg.mutation_ratio)
        genes = rng.integers(0, n, size=len(mutate))
        reinit = rng.random(len(mutate)) < 0.5
        fresh = np.stack([rng.integers(0, problem.max_x[genes] + 1), rng.integers(0, problem.max_y[genes] + 1)], axis=-1)
        nudged = children[mutate, genes] + np.rint(rng.normal(0.0, cfg.gaussian_sigma_px, size=(len(mutate), 2)))
        nudged = np.stack([np.clip(nudged[:, 0], 0, problem.max_x[genes]),
                           np.clip(nudged[:, 1], 0, problem.max_y[genes])], axis=-1).astype(np.int64)
        children[mutate, genes] = np.where(reinit[:, None], fresh, nudged)
        G = np.concatenate([elites, children])
    final = Population(pop.names, G, problem.evaluate(G)["total"])
    return EvolveResult(Genome.from_array(pop.names, best), problem.breakdown(best), gen, history, final)


def normalize(best: Genome, cfg: GroundingConfig) -> dict[str, tuple[float, float]]:
    return {n: (x / cfg.plane_w, y / cfg.plane_h) for n, (x, y) in best.corners.items()}


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-6 else v


def to_bbox(plane_points: Mapping[str, tuple[float, float]], scene: SceneSpec, support: SupportGraph,
            cfg: GroundingConfig) -> Layout:
    problem = Problem(scene, (), RelationLibrary(), support, cfg)
    missing = [n for n in problem.names if n not in plane_points]
    if missing:
        raise KeyError(f"plane points missing for {missing}")
    corners = np.array([[_snap(plane_points[n][0] * cfg.plane_w), _snap(plane_points[n][1] * cfg.plane_h)]
                        for n in problem.names])
    mins, maxs = problem.boxes(corners)
    boxes = {n: Aabb(Vec3.of(mins[i]), Vec3.of(maxs[i])) for i, n in enumerate(problem.names)}
    poses = {n: Pose(box.center) for n, box in boxes.items()}
    return Layout(poses, boxes, dict(plane_points))


@dataclass
class GroundingResult:
    layout: Layout
    genome: Genome
    breakdown: FitnessBreakdown
    generations_used: int
    support: SupportGraph
    history: list[float]


def ground(C, R, lib: RelationLibrary, scene: SceneSpec, cfg: GroundingConfig,
           support: SupportGraph | None = None) -> GroundingResult:
    support = support or build_support_graph(R, scene, lib)
    problem = Problem(scene, R, lib, support, cfg)
    pop = init_population(C, scene, cfg, support)
    res = evolve(pop, problem, cfg)
    layout = to_bbox(normalize(res.best, cfg), scene, support, cfg)
    log.info("grounded %d objects in %d generations (total %.4f / %.1f)", len(scene.objects),
             res.generations_used, res.breakdown.total, problem.full_score)
    return GroundingResult(layout, res.best, res.breakdown, res.generations_used, support, res.history)
