import json
import re

import pytest

from layoutforge.artifacts import layout_from_dict, layout_to_dict
from layoutforge.cli import build_parser, main, psf_check, resolve_settings
from layoutforge.geometry import Boundary
from layoutforge.render import render_svg
from conftest import CASSETTES, FIXTURE_SEED, layout_of

DINING = CASSETTES / "Dining_Table_0.cassette.jsonl"
TABLE = Boundary(120.0, 60.0)
ARTIFACTS = {"layout.json", "metrics.json", "report.json", "layout.svg", "cassette.jsonl"}


def write_layout(path, boxes, requested=None):
    lay = layout_of(boxes)
    path.write_text(json.dumps(layout_to_dict(lay, TABLE, requested or list(boxes))))
    return path


def generate_replay(out, *extra):
    return main(["generate", "Dining_Table", "0", "--mode", "replay", "--cassette", str(DINING),
                 "--seed", str(FIXTURE_SEED), "--out", str(out), *extra])


def test_generate_replay_writes_artifacts(tmp_path, capsys):
    # [DERIVED] frozen fixture run
    assert generate_replay(tmp_path / "run") == 0
    out = tmp_path / "run"
    assert {p.name for p in out.iterdir()} == ARTIFACTS
    report = json.loads((out / "report.json").read_text())
    assert report["solved"] and report["rounds_used"] == 1 and report["scenario"] == "Dining_Table"
    layout, boundary, requested, header = layout_from_dict(json.loads((out / "layout.json").read_text()))
    assert set(layout.names) == set(requested) and header == {"scenario": "Dining_Table", "case": 0}
    metrics = json.loads((out / "metrics.json").read_text())
    assert (metrics["cf"], metrics["ib"], metrics["fc"]) == (100.0, 100.0, 100.0)
    assert "solved in 1 round" in capsys.readouterr().out


def test_generate_replay_is_reproducible(tmp_path):
    assert generate_replay(tmp_path / "a") == 0 and generate_replay(tmp_path / "b") == 0
    for name in ("layout.json", "layout.svg", "metrics.json", "cassette.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_cassette_subset_replays(tmp_path):
    assert generate_replay(tmp_path / "a") == 0
    sub = tmp_path / "a" / "cassette.jsonl"
    assert main(["generate", "Dining_Table", "0", "--mode", "replay", "--cassette", str(sub), "--seed", "7",
                 "--out", str(tmp_path / "b")]) == 0


def test_generate_record_then_replay(tmp_path):
    cas = tmp_path / "rec.cassette.jsonl"
    base = ["generate", "Study_Desk", "1", "--seed", "3", "--cassette", str(cas), "--population", "400"]
    assert main(base + ["--mode", "record", "--provider", "heuristic", "--out", str(tmp_path / "r")]) == 0
    assert main(base + ["--mode", "replay", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "r" / "layout.json").read_bytes() == (tmp_path / "p" / "layout.json").read_bytes()


def test_generate_with_mock_judge(tmp_path):
    assert main(["generate", "Fruits_Table", "0", "--mode", "mock", "--judge", "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert (m["pos"], m["ali"]) == (75, 70) and m["psf"] is not None


def test_generate_unknown_scenario(tmp_path, capsys):
    assert main(["generate", "Kitchen_Counter", "0", "--out", str(tmp_path)]) == 1
    assert "Kitchen_Counter" in capsys.readouterr().err
    assert "Kitchen_Counter" in json.loads((tmp_path / "report.json").read_text())["diagnostic"]


def test_generate_bad_case_index(tmp_path):
    assert main(["generate", "Dining_Table", "9", "--out", str(tmp_path)]) == 1


def test_replay_without_cassette(tmp_path, capsys):
    assert main(["generate", "Dining_Table", "0", "--mode", "replay", "--out", str(tmp_path)]) == 1
    assert "--cassette" in capsys.readouterr().err


def test_replay_miss_is_error(tmp_path):
    # the Dining cassette does not cover the Bar_Table prompts
    code = main(["generate", "Bar_Table", "0", "--mode", "replay", "--cassette", str(DINING), "--out", str(tmp_path)])
    assert code == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["aborted"] and "cassette miss" in report["diagnostic"]


def test_generate_unsolved_exit_code(tmp_path):
    # seven 54 x 20 cm monitors need more area than the 120 x 60 cm table has
    corpus = tmp_path / "corpus.json"
    monitors = [f"monitor-{i}" for i in range(7)]
    corpus.write_text(json.dumps({"Wall": {"scene": "Monitor Wall", "info": "Too many screens", "case": [monitors]}}))
    code = main(["generate", "Wall", "0", "--corpus", str(corpus), "--max-rounds", "1", "--population", "50",
                 "--generations", "5", "--out", str(tmp_path / "o")])
    assert code == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert not report["solved"] and report["metrics"]["cf"] < 100
    assert (tmp_path / "o" / "layout.json").exists()


def test_bad_flag_exits_1():
    with pytest.raises(SystemExit) as e:
        main(["generate", "Dining_Table", "zero"])
    assert e.value.code == 1


# ---------------------------------------------------------------- settings


def test_settings_precedence(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[layoutforge]\nseed = 11\ntau = 0.2\nmode = replay\npopulation = 64\n")
    args = build_parser().parse_args(["generate", "X", "0", "--config", str(ini), "--seed", "5"])
    s = resolve_settings(args, environ={"LAYOUTFORGE_TAU": "0.05", "LAYOUTFORGE_SEED": "9"})
    assert (s["seed"], s["tau"], s["mode"], s["population"], s["generations"]) == (5, 0.05, "replay", 64, 100)


def test_settings_bad_value(tmp_path):
    args = build_parser().parse_args(["generate", "X", "0"])
    from layoutforge.cli import UsageError

    with pytest.raises(UsageError):
        resolve_settings(args, environ={"LAYOUTFORGE_SEED": "seven"})


def test_missing_config_file(tmp_path):
    assert main(["generate", "Dining_Table", "0", "--config", str(tmp_path / "nope.ini")]) == 1


# ---------------------------------------------------------------- evaluate


SIX = {f"item-{i}": ((5 + 18 * i, 10, 0), (15 + 18 * i, 20, 5)) for i in range(6)}


def test_evaluate_perfect(tmp_path, capsys):
    path = write_layout(tmp_path / "layout.json", SIX)
    assert main(["evaluate", str(path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert (m["cf"], m["ib"], m["fc"], m["psf"]) == (100.0, 100.0, 100.0, None)


def test_evaluate_missing_one_of_six(tmp_path):
    # [DERIVED] 5 / 6 to one decimal
    five = dict(list(SIX.items())[:5])
    path = write_layout(tmp_path / "layout.json", five, requested=list(SIX))
    assert main(["evaluate", str(path), "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["fc"] == 83.3


def test_evaluate_requested_from_corpus(tmp_path):
    boxes = {"plate": ((40, 10, 0), (66, 36, 2)), "fork": ((30, 12, 0), (33, 31, 1.5))}
    path = write_layout(tmp_path / "layout.json", boxes)
    assert main(["evaluate", str(path), "--scenario", "Dining_Table", "--case", "0"]) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["fc"] == pytest.approx(33.3)


def test_evaluate_with_judge(tmp_path):
    path = write_layout(tmp_path / "layout.json", SIX)
    assert main(["evaluate", str(path), "--judge", "--mode", "mock"]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["psf"] == round(0.4 * 100 + 0.3 * 72.5 + 0.3 * 100, 1)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("boundary"),
    lambda d: d.update(format_version=7),
    lambda d: d["objects"]["item-0"].update(center=[0, 0, 0]),
    lambda d: d["objects"]["item-0"]["box"].update(min=[1, 2]),
])
def test_evaluate_schema_failure(tmp_path, mutate):
    path = write_layout(tmp_path / "layout.json", SIX)
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    assert main(["evaluate", str(path)]) == 1


def test_evaluate_malformed_json(tmp_path):
    path = tmp_path / "layout.json"
    path.write_text("{")
    assert main(["evaluate", str(path)]) == 1


# ---------------------------------------------------------------- render


def test_render_counts_rects(tmp_path):
    path = write_layout(tmp_path / "layout.json", {"a": ((0, 0, 0), (10, 10, 1)), "b": ((20, 20, 0), (30, 30, 1))})
    assert main(["render", str(path)]) == 0
    svg = (tmp_path / "layout.svg").read_text()
    assert svg.count("<rect") == 3 and svg.count("<text") == 2


def test_render_stack_order_and_style(tmp_path):
    boxes = {"a-bowl": ((5, 5, 2), (20, 20, 9)), "z-plate": ((0, 0, 0), (26, 26, 2))}
    svg = render_svg(layout_of(boxes), TABLE)
    assert svg.index('data-name="z-plate"') < svg.index('data-name="a-bowl"')
    bowl = re.search(r'<rect data-name="a-bowl"[^>]*>', svg).group(0)
    assert "stroke-dasharray" in bowl


def test_render_empty_layout():
    svg = render_svg(layout_of({}), TABLE)
    assert svg.count("<rect") == 1 and 'id="boundary"' in svg


def test_render_deterministic_bytes(tmp_path):
    path = write_layout(tmp_path / "layout.json", SIX)
    main(["render", str(path), "--out", str(tmp_path / "a.svg")])
    main(["render", str(path), "--out", str(tmp_path / "b.svg")])
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_render_flips_y():
    svg = render_svg(layout_of({"front": ((0, 0, 0), (10, 10, 1)), "back": ((0, 50, 0), (10, 60, 1))}), TABLE)
    y = {n: float(v) for n, v in re.findall(r'data-name="(\w+)" x="[\d.]+" y="([\d.]+)"', svg)}
    assert y["back"] < y["front"]


# ---------------------------------------------------------------- bench


def test_psf_check_bundled_table(capsys):
    # [PAPER] average-row components of the four methods reproduce their PSF within 0.05
    from importlib import resources

    path = resources.files("layoutforge").joinpath("data", "table2_avg.csv")
    results, ok = psf_check(path)
    assert ok and len(results) == 4
    assert main(["bench", "--psf-check", str(path)]) == 0
    assert capsys.readouterr().out.count(" ok") == 4


def test_psf_check_mismatch(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("method,CF,IB,Pos,Ali,FC,PSF\nX,100,100,100,100,100,90.0\n")
    assert main(["bench", "--psf-check", str(path)]) == 1


def test_bench_empty_directory(tmp_path):
    assert main(["bench", str(tmp_path)]) == 1


def test_bench_single_scenario(tmp_path, capsys):
    d = tmp_path / "runs" / "Dining_Table"
    d.mkdir(parents=True)
    write_layout(d / "layout.json", SIX)
    assert main(["bench", str(tmp_path / "runs"), "--csv", str(tmp_path / "t.csv")]) == 0
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "Scenario,CF,IB,Pos.,Ali.,FC,PSF"
    assert rows[1].split(",")[1:] == rows[2].split(",")[1:] and rows[2].startswith("Average")


def test_bench_groups_by_scenario(tmp_path, capsys):
    for i, (scen, boxes) in enumerate([("A", SIX), ("A", SIX), ("B", {"p": ((0, 0, 0), (10, 10, 1)),
                                                                       "q": ((5, 5, 0), (15, 15, 1))})]):
        d = tmp_path / scen / f"case{i}"
        d.mkdir(parents=True)
        write_layout(d / "layout.json", boxes)
    assert main(["bench", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == ["Scenario", "A", "B", "Average"]
    assert lines[3].split()[1] == "50.0"  # mean of 100 and 0 collision-free
