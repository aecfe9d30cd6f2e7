"""GA convergence on the 4-object desk instance (plate, fork, knife, bowl).

Reports, per seed, the generation at which a full-score genome appears, both
from the lattice-seeded population and from a uniformly random population,
then times one run at the full 2000 x 100 setting.

    python3 scripts/ga_convergence.py --seeds 20 --population 200
"""

import argparse
import time

import numpy as np

from layoutforge.corpus import SizeCatalog
from layoutforge.fast import DiscretePoseSet
from layoutforge.geometry import Boundary, ObjectSpec, SceneSpec
from layoutforge.grounding import GroundingConfig, Population, Problem, build_support_graph, evolve, init_population
from layoutforge.relations import RelationInstance, builtin_library

NAMES = ("plate", "fork", "knife", "bowl")
RELATIONS = (
    RelationInstance("left_of", ("fork", "plate")),
    RelationInstance("left_of", ("plate", "knife")),
    RelationInstance("aligned_in_x_axis", ("fork", "plate", "knife")),
    RelationInstance("on_top_of", ("bowl", "plate")),
)
LATTICE = DiscretePoseSet({"plate": (0, 0, 0), "fork": (-1, 0, 0), "knife": (1, 0, 0), "bowl": (0, 0, 1)}, "plate")


def desk_scene() -> SceneSpec:
    cat = SizeCatalog.bundled()
    return SceneSpec("Set a simple place setting.", tuple(ObjectSpec(n, cat.size_of(n), n) for n in NAMES),
                     Boundary(120.0, 60.0))


def random_population(problem: Problem, size: int, seed: int) -> Population:
    rng = np.random.default_rng([seed, 99])
    cols = [np.stack([rng.integers(0, problem.max_x[i] + 1, size), rng.integers(0, problem.max_y[i] + 1, size)], -1)
            for i in range(len(problem.names))]
    return Population(problem.names, np.stack(cols, axis=1))


def run(seed: int, population: int, generations: int, random_init: bool):
    scene, lib = desk_scene(), builtin_library()
    cfg = GroundingConfig(population=population, generations=generations, rng_seed=seed)
    support = build_support_graph(RELATIONS, scene, lib)
    problem = Problem(scene, RELATIONS, lib, support, cfg)
    pop = random_population(problem, population, seed) if random_init else init_population(LATTICE, scene, cfg, support)
    t0 = time.perf_counter()
    res = evolve(pop, problem, cfg)
    return res, time.perf_counter() - t0


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--population", type=int, default=200)
    p.add_argument("--generations", type=int, default=100)
    args = p.parse_args()
    for random_init in (False, True):
        label = "random init" if random_init else "lattice init"
        full, gens = 0, []
        for seed in range(args.seeds):
            res, dt = run(seed, args.population, args.generations, random_init)
            full += res.breakdown.is_full
            gens.append(res.generations_used)
        print(f"{label:>12}: full {full}/{args.seeds}, generations median {int(np.median(gens))}, max {max(gens)}")
    res, dt = run(0, 2000, 100, True)
    print(f"2000 x 100 from random init: {res.generations_used} generations, {dt:.2f} s, full={res.breakdown.is_full}")


if __name__ == "__main__":
    main()
