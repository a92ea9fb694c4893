import csv
import io

from fstm.benchmark import INFEASIBLE, is_monotone, run_point, sweep, to_csv
from fstm.config import OrganogenesisRules
from fstm.presets import extend_to_pa, load_preset


def params_for(pa_max):
    return extend_to_pa(load_preset("tree1")[0], pa_max)


def test_tiny_tree_has_no_gain():
    point = run_point(params_for(2), OrganogenesisRules(2, (2,), 3), repeats=1)
    assert point.status == "ok"
    # 9 metamers in 3 classes
    assert point.metamers == 9 and point.classes == 3
    assert point.speedup < 5


def test_over_cap_marked_infeasible():
    point = run_point(params_for(4), OrganogenesisRules(4, (2, 2, 2), 10), repeats=1, cap=100)
    assert point.status == INFEASIBLE
    assert point.explicit_seconds is None and point.speedup is None
    assert point.factorized_seconds > 0


def test_csv_layout():
    points = sweep(params_for(3), horizons=(2, 4), pa_max=3, branches=2, repeats=1)
    rows = list(csv.DictReader(io.StringIO(to_csv(points))))
    assert [int(r["horizon"]) for r in rows] == [2, 4]
    assert set(rows[0]) >= {"factorized_seconds", "explicit_seconds", "speedup", "status", "node_ratio"}


def test_monotone_check_skips_infeasible():
    points = sweep(params_for(3), horizons=(3, 6), pa_max=3, branches=2, repeats=1, cap=50)
    assert points[-1].status == INFEASIBLE
    assert is_monotone(points)
