from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from structleak.errors import ContractError
from structleak.graph import Graph, NodeLabels, apply_edge_mask
from structleak.homophily import (HomophilyConfig, audit, class_frequencies, effective_labels, prior_baseline,
                                  prox_ghratio, prox_ratios, role_ghratio, role_ratios)

from conftest import random_graph

ALL_KNOWN = HomophilyConfig(5, "known-only")


def brute_force(graph, lab, counted, theta):
    """Exact double-loop ratios as Fractions (None when absent)."""
    deg = graph.degrees.tolist()
    a = graph.adjacency().toarray()
    prox, role = [], []
    for i in range(graph.n):
        if not counted[i]:
            prox.append(None)
            role.append(None)
            continue
        num = den = rnum = rden = 0
        for j in range(graph.n):
            if j == i or not counted[j]:
                continue
            if a[i, j]:
                den += 1
                num += lab[j] == lab[i]
            if abs(deg[i] - deg[j]) <= theta:
                rden += 1
                rnum += lab[j] == lab[i]
        prox.append(Fraction(int(num), den) if den else None)
        role.append(Fraction(int(rnum), rden) if rden else None)
    return prox, role


def as_optional(vals, present):
    return [float(v) if p else None for v, p in zip(vals, present)]


def test_prox_examples():
    # node 0 with neighbours labelled A, A, B
    g = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    lab = NodeLabels(np.array([0, 0, 0, 1]), np.ones(4, bool), 2)
    assert prox_ghratio(g, lab, 0, ALL_KNOWN) == pytest.approx(2 / 3)
    star = Graph.from_edges(6, [(0, i) for i in range(1, 6)])
    lab = NodeLabels(np.zeros(6, int), np.ones(6, bool), 1)
    assert prox_ghratio(star, lab, 0, ALL_KNOWN) == 1.0
    iso = Graph.from_edges(3, [(0, 1)])
    lab = NodeLabels(np.array([0, 1, 0]), np.ones(3, bool), 2)
    assert prox_ghratio(iso, lab, 2, ALL_KNOWN) is None


def test_role_examples():
    p3 = Graph.from_edges(3, [(0, 1), (1, 2)])
    lab = NodeLabels(np.array([0, 1, 0]), np.ones(3, bool), 2)
    cfg = HomophilyConfig(0, "known-only")
    assert role_ghratio(p3, lab, 0, cfg) == 1.0
    assert role_ghratio(p3, lab, 1, cfg) is None


def test_unknown_label_is_contract_error():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    lab = NodeLabels(np.array([0, 1, 0]), np.array([True, False, True]), 2)
    with pytest.raises(ContractError):
        prox_ghratio(g, lab, 1, ALL_KNOWN)
    with pytest.raises(ContractError):
        effective_labels(lab, HomophilyConfig(5, "pseudo-augmented"))


def test_prior_examples():
    lab = NodeLabels(np.array([0, 0, 1, 1]), np.ones(4, bool), 2)
    assert prior_baseline(lab, 0) == 0.5
    lab = NodeLabels(np.zeros(4, int), np.ones(4, bool), 2)
    assert prior_baseline(lab, 0) == 1.0
    lab = NodeLabels(np.array([0, 0, 0, 1]), np.ones(4, bool), 2)
    assert prior_baseline(lab, 3) == 0.25


def test_audit_examples():
    blocks = [(i, j) for i in range(5) for j in range(i + 1, 5)] + \
             [(i, j) for i in range(5, 10) for j in range(i + 1, 10)]
    g = Graph.from_edges(10, blocks)
    lab = NodeLabels(np.repeat([0, 1], 5), np.ones(10, bool), 2)
    assert np.all(audit(g, lab, ALL_KNOWN).prox == 1.0)
    k10 = Graph.from_edges(10, [(i, j) for i in range(10) for j in range(i + 1, 10)])
    rep = audit(k10, lab, ALL_KNOWN)
    assert np.allclose(rep.prox, 4 / 9)


@pytest.mark.parametrize("theta", [0, 5, 10])
@pytest.mark.parametrize("mode", ["known-only", "pseudo-augmented"])
def test_ratios_match_brute_force(theta, mode):
    g = random_graph(120, 0.06, theta + 1)
    rng = np.random.default_rng(theta)
    lab = NodeLabels(rng.integers(0, 3, 120), rng.random(120) < 0.4, 3)
    pseudo = rng.integers(0, 3, 120)
    eff, counted = effective_labels(lab, HomophilyConfig(theta, mode), pseudo)
    prox, role = brute_force(g, eff, counted, theta)
    pv, pp = prox_ratios(g, eff, counted)
    rv, rp = role_ratios(g.degrees, eff, counted, theta, 3)
    assert as_optional(pv, pp) == [None if f is None else float(f) for f in prox]
    assert as_optional(rv, rp) == [None if f is None else float(f) for f in role]
    for i in range(0, 120, 11):
        if counted[i]:
            assert prox_ghratio(g, lab, i, HomophilyConfig(theta, mode), pseudo) == \
                (None if prox[i] is None else float(prox[i]))
            assert role_ghratio(g, lab, i, HomophilyConfig(theta, mode), pseudo) == \
                (None if role[i] is None else float(role[i]))


@given(st.integers(2, 30), st.floats(0, 0.5), st.integers(1, 4), st.integers(0, 6), st.integers(0, 999))
def test_report_invariants(n, p, classes, theta, seed):
    g = random_graph(n, p, seed)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    known = rng.random(n) < 0.6
    known[0] = True
    lab = NodeLabels(labels, known, classes)
    rep = audit(g, lab, HomophilyConfig(theta, "known-only"))
    for vals, present in ((rep.prox, rep.prox_present), (rep.role, rep.role_present)):
        assert np.all((vals[present] >= 0) & (vals[present] <= 1))
        assert np.all(vals[~present] == 0)
    assert rep.class_frequency.sum() == pytest.approx(1.0, abs=1e-12)
    # absent iff the denominator set is empty
    eff, counted = effective_labels(lab, HomophilyConfig(theta, "known-only"))
    prox, role = brute_force(g, eff, counted, theta)
    assert np.array_equal(rep.prox_present, np.array([f is not None for f in prox]))
    assert np.array_equal(rep.role_present, np.array([f is not None for f in role]))


@given(st.integers(0, 999))
def test_theta_monotone_and_permutation_equivariant(seed):
    g = random_graph(40, 0.15, seed)
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 3, 40)
    counted = np.ones(40, bool)
    deg = g.degrees
    sizes = [np.array([(np.abs(deg - deg[i]) <= t).sum() for i in range(40)]) for t in range(6)]
    assert all(np.all(b >= a) for a, b in zip(sizes, sizes[1:]))
    perm = rng.permutation(3)
    for fn in (lambda x: prox_ratios(g, x, counted), lambda x: role_ratios(deg, x, counted, 2, 3)):
        a, ap = fn(lab)
        b, bp = fn(perm[lab])
        assert np.array_equal(a, b) and np.array_equal(ap, bp)


def test_identity_mask_keeps_report():
    g = random_graph(60, 0.1, 7)
    rng = np.random.default_rng(1)
    lab = NodeLabels(rng.integers(0, 2, 60), (rng.random(60) < 0.5) | (np.arange(60) < 2), 2)
    a = audit(g, lab, ALL_KNOWN).to_json()
    b = audit(apply_edge_mask(g, np.ones(g.m, bool)), lab, ALL_KNOWN).to_json()
    assert a == b


def test_report_serialization():
    g = Graph.from_edges(3, [(0, 1)])
    lab = NodeLabels(np.array([0, 1, 0]), np.ones(3, bool), 2)
    rep = audit(g, lab, HomophilyConfig(0, "known-only"))
    d = rep.to_dict()
    assert d["theta"] == 0
    assert d["nodes"][2]["prox"] is None
    assert rep.to_csv().splitlines()[0] == "node,prox,role,prior"
    assert rep.to_csv().splitlines()[3].startswith("2,,")
    assert class_frequencies(lab).tolist() == pytest.approx([2 / 3, 1 / 3])
