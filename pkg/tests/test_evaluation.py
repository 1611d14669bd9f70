import numpy as np
import pytest

from maxent_sortition.counting import build_dp
from maxent_sortition.errors import InstanceError
from maxent_sortition.evaluation import (diversity_report, estimate_marginals,
                                         exact_holdout_probability, fairness_summary, gini,
                                         holdout_experiment, jeffreys_interval, report,
                                         report_csv)
from maxent_sortition.rng import RandomStream
from maxent_sortition.sampler import SamplerConfig, sample_many

from conftest import make_instance

FAST = SamplerConfig(estimate_samples=2000)


def test_jeffreys_examples():
    lo, hi = jeffreys_interval(5000, 10_000)
    assert abs(lo - 0.490) < 5e-4 and abs(hi - 0.510) < 5e-4
    assert jeffreys_interval(0, 10_000)[0] == 0.0
    assert jeffreys_interval(10_000, 10_000)[1] == 1.0


def test_marginals_of_always_selected_member(t1):
    panels = [("1", "3"), ("1", "4"), ("1", "3")]
    est = estimate_marginals(panels, t1)
    assert est.point[0] == 1.0 and est.upper[0] == 1.0
    assert est.point[1] == 0.0 and est.lower[1] == 0.0
    assert est.hits.sum() == t1.panel_size * len(panels)
    assert est.as_rows()[2]["hits"] == 2


def test_gini_examples():
    assert gini([0.3] * 5) == 0.0
    assert gini([0, 0, 1, 1]) == pytest.approx(0.5)
    assert gini([0, 0, 0]) == 0.0
    x = np.random.default_rng(0).random(30)
    brute = np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2 * x.mean())
    assert gini(x) == pytest.approx(brute)


def test_geometric_mean():
    assert fairness_summary([0.5, 0.5])["geometric_mean"] == pytest.approx(0.5)
    assert fairness_summary([0.5, 0.0])["geometric_mean"] == 0.0
    with pytest.raises(ValueError):
        fairness_summary([])


def test_distinct_vectors_count_k():
    inst = make_instance(3, {"g": ["a", "b", "c"]}, {}, [("a",), ("b",), ("c",), ("a",)])
    rep = diversity_report([("m0", "m1", "m2")], inst)
    assert rep.expected_vector_count == 3
    assert rep.vector_count_ratio == 1.0
    assert rep.total_correlation == 0.0


def test_nmi_of_copied_feature_is_half():
    rows = [("a", "a"), ("b", "b"), ("a", "a"), ("b", "b"), ("c", "c")]
    inst = make_instance(4, {"f": ["a", "b", "c"], "g": ["a", "b", "c"]}, {}, rows)
    rep = diversity_report([("m0", "m1", "m2", "m4"), ("m0", "m1", "m3", "m4")], inst)
    assert rep.pairwise_nmi[("f", "g")] == pytest.approx(0.5)


def test_nmi_of_constant_panel_is_zero():
    inst = make_instance(2, {"f": ["a", "b"], "g": ["x", "y"]}, {},
                         [("a", "x"), ("a", "x"), ("b", "y")])
    rep = diversity_report([("m0", "m1")], inst)
    assert rep.pairwise_nmi[("f", "g")] == 0.0


def test_nmi_near_zero_for_independent_features():
    rng = np.random.default_rng(4)
    rows = [(str(a), str(b)) for a, b in rng.integers(0, 2, size=(4000, 2))]
    inst = make_instance(4000, {"f": ["0", "1"], "g": ["0", "1"]}, {}, rows)
    rep = diversity_report([tuple(f"m{i}" for i in range(4000))], inst)
    assert rep.pairwise_nmi[("f", "g")] < 1e-3
    assert 0.0 <= rep.total_correlation < 1e-3


def _two_feature_t1():
    rows = [("F", "n"), ("F", "s"), ("M", "n"), ("M", "s"), ("F", "n"), ("M", "s")]
    quotas = {("gender", "F"): (1, 2), ("gender", "M"): (1, 2),
              ("region", "n"): (1, 1), ("region", "s"): (1, 2)}
    return make_instance(3, {"gender": ["F", "M"], "region": ["n", "s"]}, quotas, rows)


def test_holdout_matches_exact_ratio():
    inst = _two_feature_t1()
    exact = exact_holdout_probability(inst, "gender")
    res = holdout_experiment(inst, "gender", 20_000, RandomStream(1), config=FAST)
    assert res.lower <= exact <= res.upper
    assert res.as_row()["feature"] == "gender"


def test_holdout_non_binding_is_one():
    inst = make_instance(2, {"g": ["F", "M"], "r": ["n", "s"]},
                         {("g", "F"): (1, 1), ("g", "M"): (1, 1)},
                         [("F", "n"), ("F", "s"), ("M", "n"), ("M", "s")])
    assert holdout_experiment(inst, "r", 500, RandomStream(0), config=FAST).probability == 1.0
    assert exact_holdout_probability(inst, "r") == 1.0


def test_holdout_jointly_unsatisfiable_is_zero():
    inst = make_instance(2, {"g": ["F", "M"], "h": ["a", "b"]},
                         {("g", "F"): (1, 1), ("g", "M"): (1, 1), ("h", "a"): (2, 2)},
                         [("F", "b"), ("F", "b"), ("M", "a"), ("M", "b")])
    assert holdout_experiment(inst, "h", 300, RandomStream(0), config=FAST).probability == 0.0
    assert exact_holdout_probability(inst, "h") == 0.0


def test_holdout_needs_two_features(t1):
    with pytest.raises(InstanceError):
        holdout_experiment(t1, "gender", 10, RandomStream(0))


def test_report_shapes(t1):
    panels = sample_many(t1, build_dp(t1, ["gender"]), 200, seed=0)
    rep = report(panels, t1)
    assert rep["m"] == 200
    assert sum(r["point"] for r in rep["marginals"]) == pytest.approx(2.0, abs=1e-12)
    text = report_csv(rep)
    assert text.splitlines()[0] == "metric,value"
    assert "fairness.gini" in text
