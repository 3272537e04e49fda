import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oppforecast.calibrate import (
    BoundaryGrid,
    CalibrationError,
    assign_quartile,
    calibrate_boundaries,
    classify,
    optimal_boundary,
    true_conditions,
)
from oppforecast.ingest import SEGMENTS

GRID = np.round(np.arange(0, 10001) / 10000, 4)


def grid_best(probs, labels):
    return max(true_conditions(probs, labels, t) for t in GRID)


@given(st.lists(st.tuples(st.integers(0, 1000), st.booleans()), min_size=1, max_size=200))
def test_matches_grid_scan(xs):
    # three-decimal probabilities: the 0.0001 grid reaches every partition
    probs = np.array([k / 1000 for k, _ in xs])
    labels = np.array([y for _, y in xs])
    t = optimal_boundary(probs, labels)
    assert 0.0 <= t <= 1.0
    achieved = true_conditions(probs, labels, t)
    assert achieved == grid_best(probs, labels)
    assert achieved >= true_conditions(probs, labels, 0.5)


def test_threshold_is_a_midpoint():
    t = optimal_boundary([0.2, 0.4, 0.6, 0.8], [0, 0, 1, 1])
    assert t == pytest.approx(0.5)


def test_ties_prefer_candidate_nearest_half():
    # 0.2 and 1.0 both reach TP + TN = 2; 0.2 is closer to 0.5
    assert optimal_boundary([0.1, 0.3, 0.9], [0, 1, 0]) == pytest.approx(0.2)
    # 0 and 1 tie at equal distance from 0.5; the lower wins
    assert optimal_boundary([0.3, 0.3], [0, 1]) == 0.0


def test_all_won_history():
    t = optimal_boundary([0.2, 0.7, 0.9], [1, 1, 1])
    assert true_conditions([0.2, 0.7, 0.9], [1, 1, 1], t) == 3
    assert t == 0.0


def test_classify_against_cell_threshold():
    thresholds = {(s, q): 0.5 for s in ("Finance", "Energy") for q in (1, 2, 3, 4)}
    thresholds[("Finance", 3)] = 0.41
    thresholds[("Energy", 1)] = 0.75
    cuts = (1.0, 2.0, 3.0)
    grid = BoundaryGrid({"Finance": cuts, "Energy": cuts}, thresholds, {}, {"Finance": 0.5, "Energy": 0.5})
    assert classify(0.6, "Finance", 2.5, grid) == "won"
    assert classify(0.6, "Energy", 0.5, grid) == "lost"


def test_cut_points_belong_to_lower_quartile():
    cuts = (10.0, 20.0, 30.0)
    assert [assign_quartile(v, cuts) for v in (10.0, 10.01, 20.0, 30.0, 30.5)] == [1, 2, 2, 3, 4]


def _history(rng, n=1200, centres=(0.7, 0.6, 0.5, 0.4)):
    segs, vals, labels, probs = [], [], [], []
    for s in SEGMENTS:
        v = np.sort(rng.uniform(1, 100, n))
        q = np.repeat(np.arange(4), n // 4)
        p = rng.uniform(0, 1, n)
        c = np.asarray(centres)[q]
        y = p > c
        segs += [s] * n
        vals.append(v)
        labels.append(y)
        probs.append(p)
    return segs, np.concatenate(vals), np.concatenate(labels), np.concatenate(probs)


def test_twelve_thresholds_and_planted_trend(rng):
    grid = calibrate_boundaries(*_history(rng))
    assert len(grid.thresholds) == 12
    assert all(0 <= t <= 1 for t in grid.thresholds.values())
    for s in SEGMENTS:
        ts = [grid.thresholds[(s, q)] for q in (1, 2, 3, 4)]
        assert all(a >= b for a, b in zip(ts, ts[1:])), ts
        assert ts == pytest.approx([0.7, 0.6, 0.5, 0.4], abs=0.01)


def test_thin_cells_use_segment_boundary(rng):
    segs, vals, labels, probs = _history(rng, n=80)
    grid = calibrate_boundaries(segs, vals, labels, probs)
    for s in SEGMENTS:
        for q in (1, 2, 3, 4):
            assert grid.support[(s, q)] == 20
            assert grid.thresholds[(s, q)] == grid.segment_thresholds[s]


def test_missing_segment_is_an_error(rng):
    with pytest.raises(CalibrationError, match="Energy"):
        calibrate_boundaries(["Healthcare", "Finance"] * 50, rng.uniform(size=100), [0, 1] * 50, rng.uniform(size=100))


def test_round_trip(rng):
    grid = calibrate_boundaries(*_history(rng, n=400))
    assert BoundaryGrid.from_dict(grid.to_dict()) == grid
    assert "Healthcare" in grid.format_table()
