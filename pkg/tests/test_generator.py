"""Generator tests: determinism, topology, supply margin, model validity."""

import json
import math

import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

import sparta.generator as generator
from sparta.full_model import build_full_lp
from sparta.generator import SUPPLY_MARGIN, GeneratorSpec, generate
from sparta.io import instance_to_document
from sparta.lp import OPTIMAL, GenerationError
from sparta.model import DC, GRID, TRANSSHIPMENT, validate_instance
from sparta.simplex import solve


def _document_bytes(instance):
    return json.dumps(instance_to_document(instance), sort_keys=True)


def _capped_supply(instance, b):
    """Producible per-step supply for product ``b``, None if any producer is uncapped."""
    product = instance.products[b]
    supply = np.zeros(len(instance.time_steps))
    for c, comp in enumerate(instance.components):
        ratio = comp.ratio.get(product.id, 0.0)
        if comp.kind != "production" or ratio <= 0.0:
            continue
        if comp.nodal_capacity_limit is None:
            return None
        for i, node in enumerate(instance.nodes):
            limit = comp.nodal_capacity_limit.get(node.id, math.inf)
            if not math.isfinite(limit):
                return None
            supply += ratio * instance.availability[c, i, :] * limit
    return supply


def test_same_spec_same_document():
    spec = GeneratorSpec(seed=42)
    assert _document_bytes(generate(spec)) == _document_bytes(generate(spec))


def test_different_seeds_differ():
    assert _document_bytes(generate(GeneratorSpec(seed=0))) != _document_bytes(
        generate(GeneratorSpec(seed=1))
    )


def test_topology_size_and_connectivity():
    inst = generate(GeneratorSpec(seed=5))
    assert len(inst.nodes) == 12
    assert len(inst.edges) == 18  # 12 nodes at 1.5 edges per node
    index = {node.id: i for i, node in enumerate(inst.nodes)}
    rows = [index[e.node_a] for e in inst.edges]
    cols = [index[e.node_b] for e in inst.edges]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(12, 12))
    n_parts, _ = connected_components(adj, directed=False)
    assert n_parts == 1
    assert all(e.length > 0.0 for e in inst.edges)


def test_legacy_grid_on_spanning_tree():
    inst = generate(GeneratorSpec(seed=5))
    grids = [c for c in inst.components if c.kind == GRID]
    assert len(grids) == 1
    g = inst.components.index(grids[0]) - sum(
        1 for c in inst.components if c.kind != GRID
    )
    held = inst.existing_grid[g, :, 0]
    # a spanning tree of 12 nodes has 11 edges; the rest start greenfield
    assert int((held > 0.0).sum()) == 11
    index = {node.id: i for i, node in enumerate(inst.nodes)}
    backbone = [e for e, cap in zip(inst.edges, held) if cap > 0.0]
    rows = [index[e.node_a] for e in backbone]
    cols = [index[e.node_b] for e in backbone]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(12, 12))
    n_parts, _ = connected_components(adj, directed=False)
    assert n_parts == 1


@pytest.mark.parametrize("seed", range(6))
def test_instances_validate(seed):
    report = validate_instance(generate(GeneratorSpec(seed=seed)))
    assert report.ok, report.violations


@pytest.mark.parametrize("seed", range(6))
def test_supply_margin_holds(seed):
    inst = generate(GeneratorSpec(seed=seed))
    checked = 0
    for b in range(len(inst.products)):
        supply = _capped_supply(inst, b)
        if supply is None:
            continue
        checked += 1
        need = (1.0 + SUPPLY_MARGIN) * inst.demand[b].sum(axis=0)
        assert np.all(supply + 1e-9 >= need)
    assert checked >= 1  # the transportable product is fully capped


def test_nontransportable_has_secured_floors():
    inst = generate(GeneratorSpec(seed=2))
    nt = [p for p in inst.products if not p.transportable]
    assert len(nt) == 1
    product = nt[0]
    assert product.secured_capacity_nodal is not None
    assert np.all(np.asarray(product.secured_capacity_nodal) >= 0.0)
    assert product.secured_capacity_system == pytest.approx(
        float(np.sum(product.secured_capacity_nodal))
    )


@pytest.mark.parametrize("mode", [TRANSSHIPMENT, DC])
def test_generated_instance_is_solvable(mode):
    inst = generate(GeneratorSpec(seed=9, n_nodes=6, n_time_steps=4, transport_mode=mode))
    result = solve(build_full_lp(inst))
    assert result.status == OPTIMAL
    assert result.objective > 0.0


def test_unreachable_margin_raises(monkeypatch):
    monkeypatch.setattr(generator, "_apply_supply_margin", lambda *args: False)
    with pytest.raises(GenerationError, match="supply margin"):
        generate(GeneratorSpec(seed=0))


def test_invalid_product_rejected(monkeypatch):
    report = generator.validate_instance(generate(GeneratorSpec(seed=0)))
    assert report.ok
    monkeypatch.setattr(
        generator, "validate_instance",
        lambda inst: type(report)(violations=["made-up defect"]),
    )
    with pytest.raises(GenerationError, match="made-up defect"):
        generate(GeneratorSpec(seed=0))


@pytest.mark.parametrize("kwargs", [
    dict(n_nodes=1),
    dict(n_time_steps=0),
    dict(n_products=0),
    dict(n_nontransportable=2, n_products=2),
    dict(n_components=1, n_products=2),
    dict(grid_density=0.0),
    dict(demand_range=(5.0, 2.0)),
    dict(availability_range=(0.5, 0.2)),
    dict(transport_mode="teleport"),
])
def test_bad_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        GeneratorSpec(**kwargs)


def test_three_products_two_grids():
    inst = generate(GeneratorSpec(
        seed=3, n_nodes=8, n_time_steps=4, n_products=3, n_nontransportable=1,
        n_components=6,
    ))
    assert sum(1 for c in inst.components if c.kind == GRID) == 2
    assert sum(1 for p in inst.products if p.transportable) == 2
    assert validate_instance(inst).ok
