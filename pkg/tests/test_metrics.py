import numpy as np
import pytest
from hypothesis import given, strategies as st

from layoutforge.geometry import Boundary
from layoutforge.llm import Gateway, Mock, Record, Replay
from layoutforge.metrics import (
    BoundaryCounts, JudgeUnparseable, MetricsReport, boundary_counts, collision_free_score, evaluate_layout,
    functional_completeness, in_boundary_score, parse_judge, psf, semantic_scores_llm,
)
from layoutforge.mock import HeuristicPolicy, ScriptedPolicy
from conftest import layout_of
from oracles import cf_bruteforce, ib_stepwise, psf_exact

TABLE = Boundary(120.0, 60.0)


def random_boxes(rng, n):
    out = {}
    for i in range(n):
        lo = rng.uniform([-10, -10, 0], [120, 60, 8])
        # snap some coordinates to a coarse grid so touching and stacking cases occur
        if rng.random() < 0.5:
            lo = np.round(lo / 5) * 5
        size = rng.uniform(1, 40, size=3)
        if rng.random() < 0.5:
            size = np.round(size / 5) * 5 + 5
        out[f"obj-{i}"] = (tuple(lo), tuple(lo + size))
    return out


def test_cf_ib_match_oracles_on_500_layouts():
    # [DERIVED] brute-force pair scans and stepwise counting, independent of the package code
    rng = np.random.default_rng(2024)
    for _ in range(500):
        boxes = random_boxes(rng, int(rng.integers(1, 9)))
        lay = layout_of(boxes)
        cf, rho, miou = collision_free_score(lay)
        ocf, orho, omiou = cf_bruteforce(boxes)
        assert cf == pytest.approx(ocf, abs=1e-12) and rho == pytest.approx(orho, abs=1e-12)
        assert miou == pytest.approx(omiou, abs=1e-12)
        ib, counts = ib_stepwise(boxes, 120.0, 60.0)
        c = boundary_counts(lay, TABLE)
        assert (c.out_of_bounds, c.stacking_pairs, c.unstable_pairs) == counts
        assert in_boundary_score(lay, TABLE) == pytest.approx(ib, abs=1e-12)


def test_cf_single_object():
    assert collision_free_score(layout_of({"vase": ((0, 0, 0), (5, 5, 20))})) == (1.0, 0.0, 0.0)


def test_cf_one_colliding_pair():
    # [DERIVED] a and b share 2/3 of a unit-section bar: IoU = 2 / (3 + 3 - 2) = 0.5; c is far away
    boxes = {"a": ((0, 0, 0), (3, 1, 1)), "b": ((1, 0, 0), (4, 1, 1)), "c": ((50, 50, 0), (51, 51, 1))}
    cf, rho, miou = collision_free_score(layout_of(boxes))
    assert cf_bruteforce(boxes) == pytest.approx((2 / 3, 1 / 3, 0.5))
    assert (cf, rho, miou) == pytest.approx((2 / 3, 1 / 3, 0.5), abs=1e-12)


def test_cf_disjoint_and_tau():
    boxes = {"a": ((0, 0, 0), (10, 10, 10)), "b": ((9.95, 0, 0), (19.95, 10, 10))}
    # IoU = 0.05 / 19.95 < tau
    assert collision_free_score(layout_of(boxes))[0] == 1.0
    assert collision_free_score(layout_of(boxes), tau=0.001)[0] == 0.0


def test_ib_all_inside():
    assert in_boundary_score(layout_of({"a": ((0, 0, 0), (10, 10, 1)), "b": ((20, 20, 0), (30, 30, 1))}), TABLE) == 1.0


def test_ib_one_overhanging():
    lay = layout_of({"a": ((0, 0, 0), (10, 10, 1)), "b": ((115, 20, 0), (125, 30, 1))})
    assert in_boundary_score(lay, TABLE) == 0.5


def test_ib_overhanging_stack():
    # [DERIVED] V_T 0, S 1, V_S 1 -> 1 - 1/3
    lay = layout_of({"plate": ((10, 10, 0), (36, 36, 2)), "bowl": ((30, 12, 2), (45, 27, 9))})
    c = boundary_counts(lay, TABLE)
    assert c == BoundaryCounts(2, 0, 1, 1)
    assert c.ib == pytest.approx(1 - 1 / 3) and c.violation_ratio == pytest.approx(1 / 3)


def test_ib_below_surface_counts():
    lay = layout_of({"a": ((10, 10, -1), (20, 20, 5))})
    assert in_boundary_score(lay, TABLE) == 0.0


def test_fc_examples():
    lay = layout_of({f"o{i}": ((i * 10, 0, 0), (i * 10 + 5, 5, 5)) for i in range(6)})
    assert functional_completeness([f"o{i}" for i in range(6)], lay) == 1.0
    assert functional_completeness([f"o{i}" for i in range(9)], lay) == pytest.approx(2 / 3)
    assert functional_completeness(["o0", "o1"], lay) == 1.0
    with pytest.raises(ValueError):
        functional_completeness([], lay)


def test_psf_all_hundred():
    assert psf(100, 100, 100, 100, 100) == pytest.approx(100)


@pytest.mark.parametrize("row, published", [
    # [PAPER] average-row component values and PSF of the four compared methods
    ((80.0, 73.1, 76.4, 63.7, 90.3), 78.7),
    ((98.7, 98.7, 74.3, 73.5, 100.0), 91.7),
])
def test_psf_published_rows(row, published):
    assert abs(psf(*row) - published) <= 0.05 + 1e-9
    assert psf(*row) == pytest.approx(float(psf_exact(*row)), abs=1e-12)


def test_psf_range():
    with pytest.raises(ValueError):
        psf(101, 0, 0, 0, 0)


@given(*[st.floats(0, 100)] * 5)
def test_psf_matches_exact_formula(cf, ib, pos, ali, fc):
    assert psf(cf, ib, pos, ali, fc) == pytest.approx(float(psf_exact(cf, ib, pos, ali, fc)), abs=1e-9)


@given(st.integers(0, 4), *[st.floats(0, 90)] * 5, st.floats(0, 10))
def test_psf_linear_coefficients(k, cf, ib, pos, ali, fc, d):
    args = [cf, ib, pos, ali, fc]
    bumped = list(args)
    bumped[k] += d
    coef = (0.2, 0.2, 0.15, 0.15, 0.3)[k]
    assert psf(*bumped) - psf(*args) == pytest.approx(coef * d, abs=1e-9)


@given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(-50, 50))
def test_metrics_invariant_under_translation_and_relabel(seed, dx, dy):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 5)
    lay = layout_of(boxes)
    moved = lay.from_boxes({n: b.translated(dx, dy) for n, b in lay.boxes.items()})
    relabeled = layout_of({f"x{k}": v for k, v in zip(range(5, 0, -1), boxes.values())})
    base = collision_free_score(lay), in_boundary_score(lay, TABLE)
    for other, bnd in ((moved, TABLE.translated(dx, dy)), (relabeled, TABLE)):
        cf, ib = collision_free_score(other), in_boundary_score(other, bnd)
        assert cf == pytest.approx(base[0], abs=1e-9) and ib == pytest.approx(base[1], abs=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_cf_monotone_when_a_collision_is_removed(seed):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 6)
    cf = collision_free_score(layout_of(boxes))[0]
    for name, (lo, hi) in boxes.items():
        if any(cf_bruteforce({name: boxes[name], m: boxes[m]})[1] for m in boxes if m != name):
            moved = dict(boxes)
            moved[name] = ((lo[0] + 1000, lo[1], lo[2]), (hi[0] + 1000, hi[1], hi[2]))
            assert collision_free_score(layout_of(moved))[0] > cf


def test_ib_one_iff_no_violation():
    rng = np.random.default_rng(5)
    for _ in range(200):
        lay = layout_of(random_boxes(rng, 4))
        c = boundary_counts(lay, TABLE)
        assert (c.ib == 1.0) == (c.out_of_bounds == 0 and c.unstable_pairs == 0)


# ---------------------------------------------------------------- report and judge


def test_evaluate_layout_report():
    lay = layout_of({"a": ((0, 0, 0), (10, 10, 1)), "b": ((115, 20, 0), (125, 30, 1))})
    rep = evaluate_layout(lay, TABLE, ["a", "b", "c"], pos=75, ali=70)
    assert (rep.cf, rep.ib, rep.fc) == (100.0, 50.0, 66.7)
    assert rep.psf == round(psf(100, 50, 75, 70, 200 / 3), 1)
    assert rep.ib_violation_ratio == 0.5
    assert MetricsReport.from_dict(rep.to_dict()) == rep
    assert evaluate_layout(lay, TABLE, ["a"]).psf is None


def test_report_percent_invariant():
    with pytest.raises(ValueError):
        MetricsReport(cf=101, ib=0, mean_iou=0, rho=0, fc=0)


def test_judge_mock_constants():
    assert semantic_scores_llm("render", "Set the table.", Gateway(Mock(HeuristicPolicy(judge=(75, 70))))) == (75, 70)


def test_judge_replay(tmp_path):
    path = tmp_path / "j.cassette.jsonl"
    rec = semantic_scores_llm("r", "i", Gateway(Record(path, HeuristicPolicy(judge=(81, 64)))))
    assert semantic_scores_llm("r", "i", Gateway(Replay(path))) == rec == (81, 64)


def test_judge_unparseable_after_retries():
    policy = ScriptedPolicy(replies={"judge_pos_ali": ["</score>Pos: 80</score>"] * 3})
    with pytest.raises(JudgeUnparseable, match="judge unparseable"):
        semantic_scores_llm("r", "i", Gateway(Mock(policy)))
    assert policy.calls.count("judge_pos_ali") == 3


def test_judge_retry_recovers():
    policy = ScriptedPolicy(replies={"judge_pos_ali": ["no numbers", "</score>Pos: 80\nAli: 60</score>"]})
    assert semantic_scores_llm("r", "i", Gateway(Mock(policy))) == (80, 60)


def test_parse_judge_forms():
    assert parse_judge("</score>\nPos.: 74\nAli = 73.5\n</score>") == (74, 73.5)
    with pytest.raises(JudgeUnparseable):
        parse_judge("</score>Pos: 140\nAli: 3</score>")
