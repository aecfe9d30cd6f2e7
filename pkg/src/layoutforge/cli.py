"""Command line interface: generate, evaluate, render and bench.

Settings resolve as command-line flags > LAYOUTFORGE_* environment variables
> ``--config`` INI file ([layoutforge] section) > built-in defaults.
Exit codes: 0 solved or success, 2 unsolved, 1 error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

from .artifacts import SchemaError, layout_to_dict, read_layout, write_json
from .corpus import CorpusError, build_scene, find_scenario, load_corpus
from .grounding import GroundingConfig
from .llm import Gateway, LLMError, Live, Mock, Record, Replay
from .loop import LoopConfig, run_closed_loop
from .metrics import DEFAULT_TAU, JudgeUnparseable, evaluate_layout, psf, semantic_scores_llm
from .relations import builtin_library, load_library
from .render import render_svg, render_text

log = logging.getLogger("layoutforge")

EXIT_OK, EXIT_ERROR, EXIT_UNSOLVED = 0, 1, 2
PSF_TOLERANCE = 0.05
# published values carry one decimal; a difference of exactly 0.05 must not fail on float noise
PSF_SLACK = 1e-9

DEFAULTS = {
    "mode": "mock",
    "cassette": None,
    "seed": 0,
    "out": None,
    "tau": DEFAULT_TAU,
    "endpoint": None,
    "model": "gpt-4o",
    "provider": "http",
    "population": 2000,
    "generations": 100,
    "max_rounds": 5,
    "judge": False,
    "corpus": None,
    "library": None,
}
CASTS = {"seed": int, "tau": float, "population": int, "generations": int, "max_rounds": int,
         "judge": lambda v: str(v).lower() in ("1", "true", "yes", "on")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def resolve_settings(args: argparse.Namespace, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    file_values = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"config file not found: {args.config}")
        if cp.has_section("layoutforge"):
            file_values = dict(cp.items("layoutforge"))
    out = {}
    for key, default in DEFAULTS.items():
        value = getattr(args, key, None)
        if value is None:
            value = environ.get(f"LAYOUTFORGE_{key.upper()}")
        if value is None:
            value = file_values.get(key)
        if value is None:
            value = default
        if value is not None and key in CASTS:
            try:
                value = CASTS[key](value)
            except ValueError:
                raise UsageError(f"invalid value for {key}: {value!r}") from None
        out[key] = value
    return out


def make_gateway(s: dict) -> Gateway:
    mode = s["mode"]
    if mode in ("replay", "record") and not s["cassette"]:
        raise UsageError(f"--mode {mode} requires --cassette")
    if mode in ("live",) or (mode == "record" and s["provider"] == "http"):
        if not s["endpoint"]:
            raise UsageError(f"--mode {mode} needs --endpoint (or --provider mock for record)")
    if mode == "mock":
        return Gateway(Mock("heuristic"), model_id=s["model"])
    if mode == "replay":
        return Gateway(Replay(s["cassette"]), model_id=s["model"])
    if mode == "record":
        provider = Live(s["endpoint"]) if s["provider"] == "http" else s["provider"]
        return Gateway(Record(s["cassette"], provider), model_id=s["model"])
    if mode == "live":
        return Gateway(Live(s["endpoint"]), model_id=s["model"])
    raise UsageError(f"unknown mode {mode!r}")


def _common(p: argparse.ArgumentParser, gateway: bool = True) -> None:
    p.add_argument("--config", help="INI file with a [layoutforge] section")
    p.add_argument("--out", help="output directory or file")
    p.add_argument("--tau", type=float, help="IoU threshold for collisions (default 0.01)")
    if gateway:
        p.add_argument("--mode", choices=("live", "record", "replay", "mock"))
        p.add_argument("--cassette", help="cassette JSONL for replay/record")
        p.add_argument("--provider", help="record-mode provider: http or a mock policy name")
        p.add_argument("--endpoint", help="chat-completions URL for live/record")
        p.add_argument("--model", help="model id sent to the provider")
        p.add_argument("--judge", action="store_const", const=True, help="score Pos./Ali. with the judge template")
    p.add_argument("--corpus", help="corpus JSON (default: bundled)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layoutforge", description="Tabletop layout synthesis and evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="run the closed loop on one corpus case")
    g.add_argument("scenario")
    g.add_argument("case", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--population", type=int)
    g.add_argument("--generations", type=int)
    g.add_argument("--max-rounds", dest="max_rounds", type=int)
    g.add_argument("--library", help="relation library JSON (default: builtin)")
    _common(g)

    e = sub.add_parser("evaluate", help="compute metrics for a layout.json")
    e.add_argument("layout")
    e.add_argument("--scenario", help="take the requested objects from this corpus scenario")
    e.add_argument("--case", type=int)
    _common(e)

    r = sub.add_parser("render", help="draw a layout.json as SVG")
    r.add_argument("layout")
    r.add_argument("--out", help="SVG path (default: next to the layout)")

    b = sub.add_parser("bench", help="aggregate metrics over a directory of layouts")
    b.add_argument("directory", nargs="?")
    b.add_argument("--csv", help="also write the table as CSV")
    b.add_argument("--psf-check", dest="psf_check", help="verify the PSF column of a published-values CSV")
    b.add_argument("--tau", type=float)
    b.add_argument("--config")
    return parser


# ---------------------------------------------------------------- commands


def _requested_from(args, s, requested):
    if args.scenario is None:
        return requested
    scenarios = load_corpus(s["corpus"])
    sc = find_scenario(scenarios, args.scenario)
    case = args.case or 0
    if not 0 <= case < len(sc.cases):
        raise UsageError(f"{sc.key} has no case {case}")
    return list(sc.cases[case])


def cmd_generate(args, s) -> int:
    out = Path(s["out"] or f"runs/{args.scenario}_{args.case}")
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    try:
        scenarios = load_corpus(s["corpus"])
        sc = find_scenario(scenarios, args.scenario)
        scene = build_scene(sc, args.case, seed=s["seed"])
        lib = load_library(s["library"]) if s["library"] else builtin_library()
        gateway = make_gateway(s)
        ground_cfg = GroundingConfig(population=s["population"], generations=s["generations"], rng_seed=s["seed"])
        loop_cfg = LoopConfig(max_rounds=s["max_rounds"])
    except (KeyError, IndexError, ValueError, UsageError, CorpusError, LLMError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
        write_json(report_path, {"solved": False, "diagnostic": f"error: {msg}"})
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR

    report = run_closed_loop(scene, lib, gateway, loop_cfg, ground_cfg)
    doc = report.to_dict()
    doc = {"scenario": sc.key, "case": args.case, "seed": s["seed"], **doc}
    if report.final_layout is not None:
        layout = report.final_layout
        pos = ali = None
        if s["judge"] and not report.aborted:
            try:
                pos, ali = semantic_scores_llm(render_text(layout, scene.boundary), scene.instruction, gateway)
            except (JudgeUnparseable, LLMError) as e:
                doc["diagnostic"] = (doc["diagnostic"] or "") + f" judge: {e}"
        metrics = evaluate_layout(layout, scene.boundary, scene.names, s["tau"], pos, ali)
        doc["metrics"] = metrics.to_dict()
        doc["fingerprints"] = list(gateway.fingerprints)
        write_json(out / "layout.json", layout_to_dict(layout, scene.boundary, scene.names, sc.key, args.case))
        write_json(out / "metrics.json", metrics.to_dict())
        (out / "layout.svg").write_text(render_svg(layout, scene.boundary), encoding="utf-8")
    gateway.cassette.write_subset(gateway.fingerprints, out / "cassette.jsonl")
    write_json(report_path, doc)
    status = "solved" if report.solved else ("aborted" if report.aborted else "unsolved")
    print(f"{sc.key}[{args.case}]: {status} in {report.rounds_used} round(s); artifacts in {out}")
    if report.metrics is not None:
        m = doc["metrics"]
        print(f"CF {m['cf']:.1f}  IB {m['ib']:.1f}  FC {m['fc']:.1f}" + (f"  PSF {m['psf']:.1f}" if m["psf"] is not None else ""))
    if report.aborted:
        print(f"error: {report.diagnostic}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if report.solved else EXIT_UNSOLVED


def cmd_evaluate(args, s) -> int:
    layout, boundary, requested, _ = read_layout(args.layout)
    requested = _requested_from(args, s, requested)
    if not requested:
        raise UsageError("no requested objects: the layout lists none and no --scenario was given")
    pos = ali = None
    if s["judge"]:
        pos, ali = semantic_scores_llm(render_text(layout, boundary), "Evaluate the arrangement.", make_gateway(s))
    metrics = evaluate_layout(layout, boundary, requested, s["tau"], pos, ali)
    out = Path(s["out"]) if s["out"] else Path(args.layout).with_name("metrics.json")
    write_json(out, metrics.to_dict())
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def cmd_render(args, s) -> int:
    layout, boundary, _, _ = read_layout(args.layout)
    out = Path(args.out) if args.out else Path(args.layout).with_suffix(".svg")
    out.write_text(render_svg(layout, boundary), encoding="utf-8")
    print(out)
    return EXIT_OK


COLUMNS = ("CF", "IB", "Pos.", "Ali.", "FC", "PSF")


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.1f}"


def _table(rows: list[tuple[str, list]]) -> str:
    head = ["Scenario", *COLUMNS]
    body = [[name, *(_fmt(v) for v in vals)] for name, vals in rows]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in [head] + body)


def _mean(vals):
    vals = list(vals)
    return None if not vals or any(v is None for v in vals) else sum(vals) / len(vals)


def bench_rows(directory: Path, tau: float) -> list[tuple[str, list]]:
    groups = defaultdict(list)
    for path in sorted(directory.rglob("layout.json")):
        rel = path.relative_to(directory)
        groups[rel.parts[0] if len(rel.parts) > 1 else directory.name].append(path)
    rows = []
    for scenario, paths in sorted(groups.items()):
        per = []
        for p in paths:
            layout, boundary, requested, _ = read_layout(p)
            pos = ali = None
            judged = p.with_name("metrics.json")
            if judged.exists():
                prior = json.loads(judged.read_text(encoding="utf-8"))
                pos, ali = prior.get("pos"), prior.get("ali")
            m = evaluate_layout(layout, boundary, requested, tau, pos, ali)
            per.append([m.cf, m.ib, m.pos, m.ali, m.fc, m.psf])
        rows.append((scenario, [_mean(col) for col in zip(*per)]))
    if rows:
        avg = [_mean(col) for col in zip(*(vals for _, vals in rows))]
        rows.append(("Average", avg))
    return rows


def psf_check(path) -> tuple[list[dict], bool]:
    results, ok = [], True
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vals = {k: float(row[k]) for k in ("CF", "IB", "Pos", "Ali", "FC", "PSF")}
            got = psf(vals["CF"], vals["IB"], vals["Pos"], vals["Ali"], vals["FC"])
            passed = abs(got - vals["PSF"]) <= PSF_TOLERANCE + PSF_SLACK
            ok &= passed
            results.append({"method": row["method"], "published": vals["PSF"], "computed": got, "pass": passed})
    if not results:
        raise UsageError(f"{path}: no rows")
    return results, ok


def cmd_bench(args, s) -> int:
    if args.psf_check:
        results, ok = psf_check(args.psf_check)
        for r in results:
            print(f"{r['method']:<12} published {r['published']:.1f}  computed {r['computed']:.3f}  "
                  f"{'ok' if r['pass'] else 'MISMATCH'}")
        return EXIT_OK if ok else EXIT_ERROR
    if not args.directory:
        raise UsageError("bench needs a layout directory or --psf-check")
    directory = Path(args.directory)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    rows = bench_rows(directory, s["tau"])
    if not rows:
        print(f"error: no layout.json files under {directory}", file=sys.stderr)
        return EXIT_ERROR
    print(_table(rows))
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Scenario", *COLUMNS])
        for name, vals in rows:
            w.writerow([name, *(_fmt(v) for v in vals)])
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        s = resolve_settings(args)
        return {"generate": cmd_generate, "evaluate": cmd_evaluate, "render": cmd_render, "bench": cmd_bench}[
            args.command](args, s)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (SchemaError, CorpusError, KeyError, ValueError, OSError, LLMError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
