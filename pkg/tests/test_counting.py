import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxent_sortition.counting import (WeightVector, build_dp, choose_anchor,
                                       convolution_coeffs, count_incrementally, pruning_audit,
                                       reweight, total_count)
from maxent_sortition.errors import InstanceError, MemoryBudgetExceeded
from maxent_sortition.instance import Instance, PoolMember, VectorGroup
from maxent_sortition.oracle import (enumerate_panels, generate_instance, random_weights,
                                     weighted_count)

from conftest import make_instance


def test_convolution_examples():
    assert convolution_coeffs([1, 1]) == [1, 2, 1]
    assert convolution_coeffs([2, 1]) == [1, 3, 2]
    assert convolution_coeffs([1, 1, 1]) == [1, 3, 3, 1]
    assert convolution_coeffs([5, 5, 5], limit=1) == [1, 15]
    assert convolution_coeffs([3, 1, 2], limit=2) == [1, 6, 11]


def test_t1_counts(t1):
    t = build_dp(t1, ["gender"])
    assert total_count(t) == 4
    w = WeightVector.from_list(t1, [2, 1, 1, 1])
    assert build_dp(t1, ["gender"], w).total_count == 6
    assert reweight(t, w).total_count == 6


def test_infeasible_is_a_result():
    # one F in the pool but two required
    inst = make_instance(2, {"g": ["F", "M"]}, {("g", "F"): (2, 2), ("g", "M"): (0, 0)},
                         [("F",), ("M",), ("M",)])
    t = build_dp(inst, ["g"])
    assert t.total_count == 0
    assert t.num_states == 0
    assert reweight(t, WeightVector.uniform(inst, 3)).total_count == 0


def test_size_only_table(t1):
    assert build_dp(t1, []).total_count == math.comb(4, 2)


def test_reweight_identity(t1):
    t = build_dp(t1, ["gender"])
    again = reweight(t, WeightVector.uniform(t1))
    assert [c.tolist() for c in again.counts] == [c.tolist() for c in t.counts]


def test_weights_validated(t1):
    with pytest.raises(InstanceError):
        WeightVector.from_list(t1, [0, 1, 1, 1])
    with pytest.raises(InstanceError):
        WeightVector.from_list(t1, [10**12 + 1, 1, 1, 1])
    with pytest.raises(InstanceError):
        WeightVector.from_list(t1, [1.5, 1, 1, 1])


def test_stored_states_are_positive():
    inst = generate_instance(12, 4, [3, 2], tightness=0.8, seed=3)
    t = build_dp(inst, inst.feature_names)
    for counts in t.counts:
        assert all(c > 0 for c in counts)
    assert t.layer_stats()[0]["states"] == 1


def test_anchor_is_widest_binding_feature():
    inst = generate_instance(20, 4, [2, 4, 4, 3], tightness=0.9, seed=1)
    assert choose_anchor(inst, inst.feature_names) == "f1"
    assert choose_anchor(inst, ["f0"]) == "f0"


def test_anchor_drops_finished_values():
    inst = generate_instance(30, 5, [5, 2], tightness=0.9, seed=2)
    with_anchor = build_dp(inst, inst.feature_names)
    without = build_dp(inst, inst.feature_names, use_anchor=False)
    assert with_anchor.total_count == without.total_count
    assert len(with_anchor.fields) < len(without.fields)


def test_memory_budget_raises():
    inst = generate_instance(60, 8, [4, 3, 3], tightness=0.9, seed=0)
    with pytest.raises(MemoryBudgetExceeded) as err:
        build_dp(inst, inst.feature_names, memory_budget=2000)
    assert err.value.layer >= 1
    assert err.value.live_states > 0


def test_prune_with_mismatched_features(t1):
    inst = generate_instance(10, 3, [2, 2], seed=1)
    small = build_dp(inst, ["f1"])
    with pytest.raises(InstanceError):
        build_dp(inst, ["f0"], prune_with=small)


def test_progress_events():
    inst = generate_instance(30, 5, [3, 2], tightness=0.9, seed=4)
    events = []
    build_dp(inst, inst.feature_names, progress=events.append)
    assert events[-1]["event"] == "built"
    assert events[-1]["count"] == str(build_dp(inst, inst.feature_names).total_count)


def test_incremental_counts_shrink():
    inst = generate_instance(40, 6, [3, 3, 2], tightness=0.9, seed=5)
    counts = [t.total_count for t in count_incrementally(inst)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == build_dp(inst, inst.feature_names).total_count


def test_wide_keys_fall_back_to_python_ints():
    # sixteen binding binary features push the mixed-radix key past 62 bits
    rnd = random.Random(3)
    feats = {f"f{i}": ["a", "b"] for i in range(16)}
    rows = [tuple(rnd.choice("ab") for _ in range(16)) for _ in range(12)]
    inst = make_instance(6, feats, {(f, v): (0, 5) for f in feats for v in "ab"}, rows)
    t = build_dp(inst, inst.feature_names)
    assert t.wide
    expect = len(enumerate_panels(inst))
    assert t.total_count == expect
    assert build_dp(inst, inst.feature_names, use_anchor=False).total_count == expect
    assert count_incrementally(inst)[-1].total_count == expect


def _split(instance: Instance) -> Instance:
    """Same pool, but every member gets a unique extra tag so no groups merge."""
    from maxent_sortition.instance import FeatureDef, Quota
    k = instance.panel_size
    tag = FeatureDef("tag", tuple(m.id for m in instance.pool))
    pool = [PoolMember(m.id, {**m.attributes, "tag": m.id}) for m in instance.pool]
    quotas = list(instance.quotas) + [Quota("tag", v, 0, 1 if k > 1 else 1) for v in tag.values]
    return Instance(k, list(instance.features) + [tag], quotas, pool)


@st.composite
def small_cases(draw):
    n = draw(st.integers(4, 11))
    k = draw(st.integers(1, min(n, 6)))
    sizes = draw(st.lists(st.integers(1, 4), min_size=1, max_size=3))
    seed = draw(st.integers(0, 10**6))
    tight = draw(st.floats(0.3, 1.0))
    try:
        inst = generate_instance(n, k, sizes, tightness=tight, seed=seed)
    except InstanceError:
        return None
    return inst, random_weights(n, seed, draw(st.integers(1, 9)))


@settings(max_examples=80, deadline=None)
@given(small_cases())
def test_matches_brute_force(case):
    if case is None:
        return
    inst, w = case
    panels = enumerate_panels(inst)
    wv = WeightVector.from_list(inst, w)
    expect = weighted_count(panels, w)
    assert build_dp(inst, inst.feature_names, wv).total_count == expect
    assert build_dp(inst, inst.feature_names, wv, use_anchor=False).total_count == expect
    assert count_incrementally(inst, weights=wv)[-1].total_count == expect
    assert reweight(build_dp(inst, inst.feature_names), wv).total_count == expect


@settings(max_examples=40, deadline=None)
@given(small_cases())
def test_monotone_in_features(case):
    if case is None:
        return
    inst, w = case
    wv = WeightVector.from_list(inst, w)
    names = inst.feature_names
    counts = [build_dp(inst, names[:i], wv).total_count for i in range(len(names) + 1)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


@settings(max_examples=40, deadline=None)
@given(small_cases())
def test_aggregation_invariance(case):
    if case is None:
        return
    inst, w = case
    split = _split(inst)
    wv = WeightVector.from_list(inst, w)
    ws = WeightVector.from_list(split, w)
    assert (build_dp(inst, inst.feature_names, wv).total_count
            == build_dp(split, split.feature_names, ws).total_count)


@settings(max_examples=40, deadline=None)
@given(small_cases())
def test_pruning_sound(case):
    if case is None:
        return
    inst, w = case
    tables = count_incrementally(inst, weights=WeightVector.from_list(inst, w))
    for coarse, fine in zip(tables, tables[1:]):
        assert pruning_audit(fine, coarse) == []


def test_transitions_match_recurrence():
    inst = generate_instance(14, 5, [3, 2], tightness=0.8, seed=11)
    w = WeightVector.from_list(inst, random_weights(14, 11, 6))
    t = build_dp(inst, inst.feature_names, w)
    for j in range(len(t.groups)):
        for i, key in enumerate(t.keys[j]):
            total = 0
            for d, c in enumerate(t.conv_coeffs[j]):
                nk = t.advance(j, int(key), d)
                if nk is not None:
                    total += c * t.count_at(j + 1, nk)
            assert total == t.counts[j][i]
            cums, ds, nxt = t.options(j, i)
            assert cums[-1] == total
    thr = t.thresholds(0)
    assert np.all(np.diff(thr, axis=0) >= 0) and np.all(thr[-1] == 1.0)


def test_subset_table_suffix_sums():
    inst = generate_instance(10, 4, [2], tightness=0.5, seed=2)
    w = WeightVector.from_list(inst, random_weights(10, 2, 5))
    t = build_dp(inst, inst.feature_names, w)
    for j, g in enumerate(t.groups):
        tab = t.subset_table(j)
        ws = [t.weights[i] for i in g.indices]
        for s in range(len(ws) + 1):
            assert tab[s][: t.maxd[j] + 1] == convolution_coeffs(ws[s:], t.maxd[j]) + \
                [0] * (t.maxd[j] + 1 - len(convolution_coeffs(ws[s:], t.maxd[j])))


def test_vector_group_multiplicity(t1):
    g = VectorGroup(None, ("1", "2"), (0, 1))
    assert g.multiplicity == 2
