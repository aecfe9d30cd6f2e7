"""Run every corpus case through the closed loop and print the benchmark table.

    python3 scripts/run_corpus.py --mode replay   # uses tests/fixtures/cassettes
    python3 scripts/run_corpus.py --mode mock --out runs/mock

Each case writes runs/<Scenario>/<case>/{layout.json, metrics.json, report.json, layout.svg, cassette.jsonl}.
"""

import argparse
import sys
from pathlib import Path

from layoutforge import cli
from layoutforge.corpus import load_corpus

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures" / "cassettes"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mode", choices=("mock", "replay"), default="replay")
    p.add_argument("--out", type=Path, default=ROOT / "runs" / "corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--judge", action="store_true")
    args = p.parse_args(argv)
    codes = []
    for scenario in load_corpus():
        for case in range(len(scenario.cases)):
            flags = ["generate", scenario.key, str(case), "--mode", args.mode, "--seed", str(args.seed),
                     "--out", str(args.out / scenario.key / str(case))]
            if args.mode == "replay":
                flags += ["--cassette", str(FIXTURES / f"{scenario.key}_{case}.cassette.jsonl")]
            if args.judge:
                flags.append("--judge")
            codes.append(cli.main(flags))
    print()
    cli.main(["bench", str(args.out), "--csv", str(args.out / "bench.csv")])
    solved = sum(c == 0 for c in codes)
    print(f"\nsolved {solved}/{len(codes)}")
    return 0 if solved == len(codes) else 2


if __name__ == "__main__":
    sys.exit(main())
