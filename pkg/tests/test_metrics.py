import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from devmatch.metrics import evaluate, f05_device, f_beta
from devmatch.postprocess import PredictionSet

from oracles import f05_oracle

ids = st.sets(st.sampled_from([f"c{i}" for i in range(8)]), max_size=6)


def test_hand_cases():
    assert f05_device({"a"}, {"a"}).f05 == 1.0
    assert f05_device({"a", "b"}, {"a"}).f05 == pytest.approx(1.25 * 0.5 / (0.25 * 0.5 + 1))
    assert f05_device({"a"}, {"a", "b"}).f05 == pytest.approx(1.25 * 0.5 / (0.25 + 0.5))
    assert f05_device({"x"}, {"a"}).f05 == 0.0
    assert f05_device({"NO_MATCH"}, {"a"}).f05 == 0.0
    e = f05_device({"a", "b", "c"}, {"a", "d"})
    assert (e.tp, e.fp, e.fn) == (1, 2, 1)


def test_f_beta_zero():
    assert f_beta(0.0, 0.0) == 0.0


@given(ids, ids.filter(bool))
def test_matches_oracle(pred, truth):
    assert math.isclose(f05_device(pred, truth).f05, f05_oracle(pred, truth), abs_tol=1e-12)


@given(ids, ids.filter(bool))
def test_bounds_and_precision_weighting(pred, truth):
    e = f05_device(pred, truth)
    assert 0.0 <= e.f05 <= 1.0
    if e.p > 0 and e.r > 0:
        assert min(e.p, e.r) - 1e-12 <= e.f05 <= max(e.p, e.r) + 1e-12


def test_evaluate_mean_and_inputs(tmp_path):
    truth = {"d1": {"a"}, "d2": {"b", "c"}}
    preds = {"d1": ("a",), "d2": ("x",)}
    ev = evaluate(preds, truth)
    assert ev.mean_f05 == 0.5
    ev2 = evaluate([PredictionSet("d1", ("a",)), PredictionSet("d2", ("x",))], truth)
    assert ev2.mean_f05 == 0.5
    ev.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0].startswith("device_id")
    with pytest.raises(KeyError):
        evaluate({"zz": ("a",)}, truth)
    assert evaluate({}, truth).mean_f05 == 0.0
