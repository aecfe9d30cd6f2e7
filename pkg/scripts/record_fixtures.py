"""Record replay cassettes for corpus cases using the offline heuristic policy.

    python3 scripts/record_fixtures.py                 # every case
    python3 scripts/record_fixtures.py Dining_Table:0  # selected cases

Cassettes land in tests/fixtures/cassettes/<Scenario>_<case>.cassette.jsonl and
are recorded with the same seed and grounding settings the tests replay with.
"""

import argparse
import sys
from pathlib import Path

from layoutforge.corpus import build_scene, load_corpus
from layoutforge.grounding import GroundingConfig
from layoutforge.llm import Gateway, Record
from layoutforge.loop import run_closed_loop
from layoutforge.metrics import semantic_scores_llm
from layoutforge.relations import builtin_library
from layoutforge.render import render_text

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "fixtures" / "cassettes"
SEED = 7


def record(scenario, case: int, out_dir: Path, policy: str = "heuristic") -> bool:
    path = out_dir / f"{scenario.key}_{case}.cassette.jsonl"
    if path.exists():
        path.unlink()
    scene = build_scene(scenario, case, seed=SEED)
    gateway = Gateway(Record(path, policy))
    report = run_closed_loop(scene, builtin_library(), gateway, ground_cfg=GroundingConfig(rng_seed=SEED))
    if report.final_layout is not None:
        semantic_scores_llm(render_text(report.final_layout, scene.boundary), scene.instruction, gateway)
    print(f"{path.name}: solved={report.solved} rounds={report.rounds_used} calls={len(gateway.cassette)}")
    return report.solved


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("cases", nargs="*", help="Scenario:case selectors (default: all)")
    p.add_argument("--out", type=Path, default=OUT)
    args = p.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    scenarios = {s.key: s for s in load_corpus()}
    wanted = [c.split(":") for c in args.cases] or [(k, str(i)) for k, s in scenarios.items() for i in range(len(s.cases))]
    ok = all([record(scenarios[k], int(i), args.out) for k, i in wanted])
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
