import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdnids.identify import (
    DECLARATION_HEADER,
    AlarmSet,
    declarations_csv,
    exchange_view,
    identification_graph,
    identify_v1,
    identify_v2,
    region_localize,
    summarize_identification,
)
from sdnids.pipeline import AlarmEvent
from sdnids.sim import build_grid

TOPO = build_grid(6)
GRAPH = identification_graph(TOPO)


def _alarms(nodes, window=245):
    return AlarmSet.from_events([AlarmEvent(v, window, "ctrl_rx", 1.0, 1.0) for v in nodes])


def _peaked_exchanges(attackers, windows=300):
    ex = np.zeros((windows, TOPO.n, TOPO.n), dtype=int)
    for a in attackers:
        for v in TOPO.neighbors[a]:
            ex[:, a, v] = ex[:, v, a] = 50
    # light background traffic everywhere else
    for v in TOPO.nodes:
        for u in TOPO.neighbors[v]:
            ex[:, v, u] += 1
    return ex


def test_graph_leaves_out_infrastructure():
    assert not set(GRAPH) & TOPO.infrastructure
    assert all(not nbrs & TOPO.infrastructure for nbrs in GRAPH.values())


def test_alarm_set_keeps_first_alarm_per_node():
    events = [AlarmEvent(3, 250, "ctrl_rx", 1, 1), AlarmEvent(3, 245, "ctrl_rx", 1, 1), AlarmEvent(4, 260, "ctrl_rx", 1, 1)]
    s = AlarmSet.from_events(events)
    assert s.nodes == [3, 4] and s.window_of(3) == 245
    late = AlarmSet.from_events(events, range(250, 300))
    assert late.window_of(3) == 250


def test_v1_full_neighbourhood_declares_attacker():
    res = identify_v1(_alarms(GRAPH[10]), GRAPH)
    assert 10 in res.declared


def test_v1_empty():
    assert identify_v1(_alarms([]), GRAPH).declared == frozenset()


def test_v1_corner_false_positive():
    # 7 and all its neighbours alarm, so corner 0 is tallied by each of its
    # three neighbours (1, 6, 7) and is declared along with the attacker
    alarms = set(GRAPH[7]) | {7}
    res = identify_v1(_alarms(alarms), GRAPH)
    assert 7 in res.declared
    assert 0 in res.declared


def test_v2_soundness_under_full_evidence():
    ex = _peaked_exchanges([10])
    alarms = _alarms(GRAPH[10])
    res = identify_v2(alarms, exchange_view(ex, alarms, GRAPH), GRAPH)
    assert res.declared == {10}
    for s in res.declared:
        nominators = {v for v, n in res.nominations.items() if n == s}
        assert nominators == set(GRAPH[s])


def test_v2_tally_bounded_by_degree():
    ex = _peaked_exchanges([7, 10, 25])
    alarms = _alarms(set(GRAPH[7]) | set(GRAPH[10]) | set(GRAPH[25]))
    res = identify_v2(alarms, exchange_view(ex, alarms, GRAPH), GRAPH)
    assert res.declared == {7, 10, 25}
    assert all(c <= res.degree[s] for s, c in res.tally.items())


def test_v2_single_alarm_no_declaration():
    ex = _peaked_exchanges([10])
    alarms = _alarms([9])
    res = identify_v2(alarms, exchange_view(ex, alarms, GRAPH), GRAPH)
    assert res.nominations == {9: 10} and res.declared == frozenset()


def test_v2_abstains_without_history():
    ex = np.zeros((300, 36, 36), dtype=int)
    alarms = _alarms([9])
    res = identify_v2(alarms, exchange_view(ex, alarms, GRAPH), GRAPH)
    assert res.abstained == [9] and not res.declared


def test_v2_tie_goes_to_smaller_id():
    view = {9: {3: 5, 4: 5, 10: 2}}
    res = identify_v2(_alarms([9]), view, GRAPH)
    assert res.nominations[9] == 3


def test_exchange_view_depth():
    ex = np.zeros((300, 36, 36), dtype=int)
    ex[230:250, 9, 10] = ex[230:250, 10, 9] = 1
    view = exchange_view(ex, _alarms([9], window=245), GRAPH, depth=10)
    assert view[9][10] == 10  # windows 236..245
    with pytest.raises(ValueError):
        exchange_view(ex, _alarms([9]), GRAPH, depth=0)


@given(st.sets(st.sampled_from(sorted(GRAPH)), max_size=12), st.integers(0, 2**16))
def test_v2_deterministic_and_unanimous(nodes, seed):
    ex = np.random.default_rng(seed).integers(0, 5, (300, 36, 36))
    ex = ex + ex.transpose(0, 2, 1)
    alarms = _alarms(nodes)
    view = exchange_view(ex, alarms, GRAPH)
    a, b = identify_v2(alarms, view, GRAPH), identify_v2(alarms, view, GRAPH)
    assert a.declared == b.declared
    for s in a.declared:
        assert {v for v, n in a.nominations.items() if n == s} == set(GRAPH[s])


# -- regions ---------------------------------------------------------------------


def test_region_ranking_order_and_evidence():
    groups = [frozenset({0}), frozenset({1}), frozenset({2}), frozenset({3})]
    rk = region_localize([(2, 241), (0, 250), (3, 100)], groups, 240, 60)
    assert rk.order() == [2, 0]
    assert rk.ranks[0].evidence == pytest.approx(1 - 2 / 60)
    assert rk.reliable and "heuristic" in rk.note


def test_region_single_group_full_evidence():
    rk = region_localize([(1, 240)], [frozenset({0}), frozenset({1})], 240, 60)
    assert rk.order() == [1] and rk.ranks[0].evidence == pytest.approx(1 - 1 / 60)


def test_region_empty_and_unreliable_at_scale():
    groups = [frozenset({i}) for i in range(9)]
    rk = region_localize([], groups, 240, 60)
    assert rk.order() == [] and not rk.reliable
    with pytest.raises(ValueError):
        region_localize([(9, 250)], groups, 240, 60)


# -- reports -------------------------------------------------------------------------


def test_declaration_csv():
    res = identify_v1(_alarms(set(GRAPH[7]) | {7}), GRAPH)
    text = declarations_csv(res, [7], range(36))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == DECLARATION_HEADER
    assert len(rows) == 36
    row0 = rows[0]
    assert row0["declared"] == "1" and row0["true_attacker"] == "0"


def test_summary_counts_misidentifications():
    r1 = identify_v1(_alarms(set(GRAPH[7]) | {7}), GRAPH)
    summ = summarize_identification([r1, r1], [[7], [7]])
    assert summ.per_attacker == {7: 1.0}
    assert summ.misidentifications == 2 * len(r1.declared - {7})
    assert summ.to_dict()["misidentified_nodes"]["0"] == 2
