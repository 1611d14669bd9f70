import json

import pytest

from maxent_sortition.instance import FeatureDef, Instance, PoolMember, Quota, parse_instance

T1 = {
    "panel_size": 2,
    "features": [{"name": "gender", "values": ["F", "M"]}],
    "quotas": [{"feature": "gender", "value": "F", "min": 1, "max": 1},
               {"feature": "gender", "value": "M", "min": 1, "max": 1}],
    "pool": [{"id": "1", "attributes": {"gender": "F"}}, {"id": "2", "attributes": {"gender": "F"}},
             {"id": "3", "attributes": {"gender": "M"}}, {"id": "4", "attributes": {"gender": "M"}}],
}


@pytest.fixture
def t1():
    return parse_instance(json.dumps(T1).encode())


def make_instance(k, features, quotas, rows):
    """``features``: {name: values}; ``quotas``: {(f, v): (lo, hi)}, missing means [0, k];
    ``rows``: list of value tuples in feature order."""
    fdefs = [FeatureDef(name, tuple(vals)) for name, vals in features.items()]
    qs = [Quota(f.name, v, *quotas.get((f.name, v), (0, k))) for f in fdefs for v in f.values]
    pool = [PoolMember(f"m{i}", dict(zip(features, row))) for i, row in enumerate(rows)]
    return Instance(k, fdefs, qs, pool)


_RESULTS = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, passed, detail):
        _RESULTS[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
