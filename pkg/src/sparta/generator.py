"""Seeded synthetic test-system generator.

Builds brownfield multi-energy instances on a random planar geometry: the
Euclidean minimum spanning tree guarantees connectivity, then the shortest
remaining node pairs densify the graph up to the requested edges-per-node
ratio.  Every product gets a firm dispatchable producer; extra components
alternate between zero-marginal-cost renewables with smooth availability
profiles and converters that turn a transportable product into a
non-transportable one.  Demand is scaled down where necessary so producible
supply keeps a solvability margin above it; a spec whose margin cannot be
met within a few resamples is rejected.

The same spec always yields the same instance, byte for byte after
serialization: all randomness flows from one seeded generator in a fixed
draw order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree

from .lp import GenerationError
from .model import (
    DC,
    GRID,
    PRODUCTION,
    TRANSSHIPMENT,
    Component,
    Edge,
    EnergySystemInstance,
    Node,
    Product,
    TimeStep,
    validate_instance,
)

#: producible supply must exceed total demand by this fraction
SUPPLY_MARGIN = 0.25

#: resampling attempts before generation gives up
MAX_RETRIES = 5

_YEARS = (2020, 2025)
_FIELD = 100.0  # side length of the square the nodes are scattered over


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs of one synthetic instance; equal specs give equal documents."""

    seed: int = 0
    n_nodes: int = 12
    n_time_steps: int = 8
    n_products: int = 2
    n_nontransportable: int = 1
    n_components: int = 4
    grid_density: float = 1.5
    demand_range: tuple[float, float] = (5.0, 50.0)
    availability_range: tuple[float, float] = (0.25, 1.0)
    transport_mode: str = TRANSSHIPMENT

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise ValueError(f"need at least 2 nodes, got {self.n_nodes}")
        if self.n_time_steps < 1:
            raise ValueError(f"need at least 1 time step, got {self.n_time_steps}")
        if self.n_products < 1:
            raise ValueError(f"need at least 1 product, got {self.n_products}")
        if not 0 <= self.n_nontransportable < self.n_products:
            raise ValueError(
                "non-transportable count must leave at least one transportable product"
            )
        if self.n_components < self.n_products:
            raise ValueError("every product needs a producer: n_components < n_products")
        if self.grid_density <= 0:
            raise ValueError(f"grid density must be positive, got {self.grid_density}")
        lo, hi = self.demand_range
        if not 0 <= lo <= hi:
            raise ValueError(f"demand range must satisfy 0 <= lo <= hi, got {self.demand_range}")
        lo, hi = self.availability_range
        if not 0 <= lo < hi <= 1:
            raise ValueError(
                f"availability range must satisfy 0 <= lo < hi <= 1, got {self.availability_range}"
            )
        if self.transport_mode not in (TRANSSHIPMENT, DC):
            raise ValueError(f"unknown transport mode {self.transport_mode!r}")

    @property
    def n_transportable(self) -> int:
        return self.n_products - self.n_nontransportable


def generate(spec: GeneratorSpec) -> EnergySystemInstance:
    """Produce a validated instance, resampling a few times on a failed margin."""
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng((spec.seed, attempt))
        instance = _build(spec, rng)
        if instance is not None:
            report = validate_instance(instance)
            if not report.ok:
                raise GenerationError(
                    "generated instance failed validation: " + "; ".join(report.violations)
                )
            return instance
    raise GenerationError(
        f"could not reach the {SUPPLY_MARGIN:.0%} supply margin in {MAX_RETRIES} attempts"
    )


def _topology(spec: GeneratorSpec, rng: np.random.Generator):
    coords = rng.uniform(0.0, _FIELD, size=(spec.n_nodes, 2))
    n = spec.n_nodes
    dist = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
    tree = minimum_spanning_tree(dist).tocoo()
    backbone = {(min(int(u), int(v)), max(int(u), int(v))) for u, v in zip(tree.row, tree.col)}
    chosen = set(backbone)
    target = min(max(n - 1, int(round(n * spec.grid_density))), n * (n - 1) // 2)
    for _d, u, v in sorted(
        (dist[u, v], u, v) for u in range(n) for v in range(u + 1, n)
    ):
        if len(chosen) >= target:
            break
        chosen.add((u, v))
    nodes = tuple(Node(id=f"n{i}", x=float(coords[i, 0]), y=float(coords[i, 1])) for i in range(n))
    ordered = sorted(chosen)
    edges = tuple(
        Edge(id=f"e{k}", node_a=f"n{u}", node_b=f"n{v}", length=float(dist[u, v]))
        for k, (u, v) in enumerate(ordered)
    )
    tree_edges = [k for k, pair in enumerate(ordered) if pair in backbone]
    return nodes, edges, tree_edges


def _build(spec: GeneratorSpec, rng: np.random.Generator) -> EnergySystemInstance | None:
    n, t_count = spec.n_nodes, spec.n_time_steps
    proxy = max(float(np.mean(spec.demand_range)), 1e-6)  # sizing scale for capacities
    nodes, edges, tree_edges = _topology(spec, rng)
    node_ids = [node.id for node in nodes]

    product_ids = [f"p{b}" for b in range(spec.n_products)]
    transportable = [b < spec.n_transportable for b in range(spec.n_products)]

    # production components: one firm dispatchable per product, then extras
    # alternating between renewables and converters into non-transportable heat
    roles: list[tuple[str, int]] = [("dispatch", b) for b in range(spec.n_products)]
    extra_kinds = ["renewable"] + (["converter"] if spec.n_nontransportable else [])
    n_res = n_conv = 0
    for j in range(spec.n_components - spec.n_products):
        kind = extra_kinds[j % len(extra_kinds)]
        if kind == "renewable":
            roles.append(("renewable", n_res % spec.n_transportable))
            n_res += 1
        else:
            roles.append(("converter", spec.n_transportable + n_conv % spec.n_nontransportable))
            n_conv += 1

    components: list[Component] = []
    existing_production = np.zeros((spec.n_components, n, 1))
    availability = np.ones((spec.n_components, n, t_count))
    base_phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
    for c, (role, b) in enumerate(roles):
        pid = product_ids[b]
        invest = rng.uniform(40.0, 120.0, size=2)
        if role == "dispatch":
            limits = None
            if transportable[b]:
                held = rng.uniform(0.2, 0.8, size=n) * proxy * (rng.random(n) < 0.5)
                existing_production[c, :, 0] = held
                limits = {
                    node_ids[i]: float(held[i] + rng.uniform(0.5, 2.5) * proxy)
                    for i in range(n)
                }
            else:
                existing_production[c, :, 0] = (
                    rng.uniform(0.2, 0.6, size=n) * proxy * (rng.random(n) < 0.5)
                )
            components.append(Component(
                id=f"gen_{pid}", kind=PRODUCTION, ratio={pid: 1.0},
                invest_cost=invest, op_cost=float(rng.uniform(15.0, 60.0)),
                op_emission=float(rng.uniform(0.1, 0.8)),
                capacity_factor=float(rng.uniform(0.85, 1.0)),
                nodal_capacity_limit=limits,
            ))
        elif role == "renewable":
            lo, hi = spec.availability_range
            phase = rng.uniform(0.0, 2.0 * math.pi)
            steps = np.arange(t_count) / t_count
            wave = 0.5 + 0.5 * np.sin(
                2.0 * math.pi * steps[None, :] + phase + base_phase[:, None]
            )
            availability[c] = lo + (hi - lo) * wave
            sites = rng.uniform(1.0, 3.0, size=n) * proxy
            components.append(Component(
                id=f"res{c}_{pid}", kind=PRODUCTION, ratio={pid: 1.0},
                invest_cost=rng.uniform(60.0, 160.0, size=2), op_cost=0.0,
                capacity_factor=0.0,
                nodal_capacity_limit={node_ids[i]: float(sites[i]) for i in range(n)},
            ))
        else:
            feed = product_ids[int(rng.integers(0, spec.n_transportable))]
            components.append(Component(
                id=f"conv{c}_{pid}", kind=PRODUCTION,
                ratio={pid: float(rng.uniform(2.0, 3.0)), feed: -1.0},
                invest_cost=rng.uniform(30.0, 90.0, size=2),
                op_cost=float(rng.uniform(1.0, 5.0)),
                op_emission=float(rng.uniform(0.05, 0.3)),
                capacity_factor=float(rng.uniform(0.8, 1.0)),
            ))

    # demand: participating nodes, smooth per-product profile with node jitter
    demand = np.zeros((spec.n_products, n, t_count))
    for b in range(spec.n_products):
        base = rng.uniform(*spec.demand_range, size=n) * (rng.random(n) < 0.85)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        steps = np.arange(t_count) / t_count
        profile = 1.0 + 0.25 * np.sin(
            2.0 * math.pi * steps[None, :] + phase + 0.5 * base_phase[:, None]
        )
        jitter = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=(n, t_count))
        demand[b] = np.maximum(base[:, None] * profile * jitter, 0.0)

    if not _apply_supply_margin(spec, components, existing_production, availability, demand):
        return None

    # secured capacity floors for the non-transportable products, anchored to
    # the scaled demand peaks
    products: list[Product] = []
    for b, pid in enumerate(product_ids):
        if transportable[b]:
            products.append(Product(id=pid, transportable=True))
        else:
            nodal = 0.35 * demand[b].max(axis=1)
            products.append(Product(
                id=pid, transportable=False,
                secured_capacity_nodal=nodal,
                secured_capacity_system=float(nodal.sum()),
            ))

    # one grid component per transportable product; legacy capacity sits on
    # the spanning tree so the base network is usable but expandable
    existing_grid = np.zeros((spec.n_transportable, len(edges), 1))
    for g in range(spec.n_transportable):
        held = rng.uniform(0.3, 1.0, size=len(tree_edges)) * proxy
        existing_grid[g, tree_edges, 0] = held
        components.append(Component(
            id=f"grid_{product_ids[g]}", kind=GRID, ratio={product_ids[g]: 1.0},
            invest_cost=rng.uniform(0.5, 3.0, size=2),
            transport_mode=spec.transport_mode,
            susceptance_per_line=1.0 if spec.transport_mode == DC else 0.0,
        ))

    weight = 8760.0 / t_count
    return EnergySystemInstance(
        products=tuple(products),
        components=tuple(components),
        nodes=nodes,
        edges=edges,
        time_steps=tuple(
            TimeStep(id=f"t{t}", duration=1.0, weight=weight) for t in range(t_count)
        ),
        years=_YEARS,
        demand=demand,
        availability=availability,
        existing_production=existing_production,
        existing_grid=existing_grid,
        ghg_limit=math.inf,
        interest_rate=0.05,
    )


def _apply_supply_margin(
    spec: GeneratorSpec,
    components: list[Component],
    existing_production: np.ndarray,
    availability: np.ndarray,
    demand: np.ndarray,
) -> bool:
    """Scale demand down until producible supply clears the margin.

    Supply counts direct producers only (converters of a product count, their
    feed draw does not: the feed is independently producible by its own
    dispatchable).  Products with any uncapped producer never need scaling.
    """
    for b in range(spec.n_products):
        supply = np.zeros(spec.n_time_steps)
        uncapped = False
        for c, comp in enumerate(components):
            ratio = comp.ratio.get(f"p{b}", 0.0)
            if ratio <= 0.0:
                continue
            if comp.nodal_capacity_limit is None:
                uncapped = True
                break
            for i in range(existing_production.shape[1]):
                limit = comp.nodal_capacity_limit.get(f"n{i}", math.inf)
                if not math.isfinite(limit):
                    uncapped = True
                    break
                supply += ratio * availability[c, i, :] * limit
            if uncapped:
                break
        if uncapped:
            continue
        need = (1.0 + SUPPLY_MARGIN) * demand[b].sum(axis=0)
        live = need > 0.0
        if not live.any():
            continue
        if np.any(supply[live] <= 0.0):
            return False
        factor = float(np.min(supply[live] / need[live]))
        if factor < 1.0:
            demand[b] *= factor
    return True
