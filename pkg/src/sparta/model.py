"""Core multi-energy system data model.

An :class:`EnergySystemInstance` couples a product portfolio, a component
catalogue (converters and grids), a spatial topology, a temporal structure and
the demand/availability/existing-capacity series into one read-only object that
every optimization builder consumes.  Validation is non-destructive: it returns
a :class:`ValidationReport` and never mutates the instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PRODUCTION = "production"
GRID = "grid"
TRANSSHIPMENT = "transshipment"
DC = "dc"

#: Hours in a leap year; annual time-step weights may not exceed this.
HOURS_PER_YEAR = 8784.0


def discount_horizon(lifetime: int, discount_period: int) -> int:
    """Effective economic horizon: the technical lifetime capped by the
    discounting period."""
    return min(int(lifetime), int(discount_period))


def npv_factor(interest_rate: float, horizon: int) -> float:
    """Present-value annuity factor for a unit payment over ``horizon`` years.

    A zero interest rate degenerates to the horizon itself (the limit of the
    compound-interest expression).
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if interest_rate < 0:
        raise ValueError(f"interest rate must be >= 0, got {interest_rate}")
    if interest_rate == 0.0:
        return float(horizon)
    q = (1.0 + interest_rate) ** horizon
    return (q - 1.0) / (q * interest_rate)


@dataclass
class Product:
    """A tradeable product (electricity, heat, ...).

    ``import_cost`` is a per-time-step price series; imports are only usable at
    all when ``import_allowed`` is set (a ban is an upper bound of zero, not a
    missing variable).  ``secured_capacity_nodal`` holds the per-node firm
    capacity requirement; the system-wide requirement is its sum when both are
    given.
    """

    id: str
    transportable: bool = True
    import_allowed: bool = False
    import_cost: np.ndarray | None = None  # (time,)
    secured_capacity_nodal: np.ndarray | None = None  # (node,)
    secured_capacity_system: float | None = None


@dataclass
class Component:
    """A converter (``kind="production"``) or a transport technology
    (``kind="grid"``).

    ``ratio`` maps product id -> conversion ratio per unit of operation
    (positive = output, negative = input).  Grid components have exactly one
    positive entry (the transported product).  ``nodal_capacity_limit`` is
    keyed by node id for converters and by edge id for grid components.
    """

    id: str
    kind: str
    ratio: dict[str, float]
    invest_cost: np.ndarray  # (year,)
    op_cost: float = 0.0
    op_emission: float = 0.0
    lifetime: int = 20
    discount_period: int = 20
    capacity_factor: float = 1.0
    nodal_capacity_limit: dict[str, float] | None = None
    system_capacity_limit: float | None = None
    grid_efficiency: float = 1.0  # per unit edge length, grid only
    susceptance_per_line: float = 0.0  # grid only, DC mode
    transport_mode: str | None = None  # grid only

    @property
    def is_grid(self) -> bool:
        return self.kind == GRID


@dataclass(frozen=True)
class Node:
    id: str
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class Edge:
    """Undirected edge with a fixed orientation (a -> b counts positive)."""

    id: str
    node_a: str
    node_b: str
    length: float = 1.0


@dataclass(frozen=True)
class TimeStep:
    """One representative operating situation.

    ``weight`` is the number of hours per year the step stands for and scales
    operating cost and emissions; ``duration`` is the step's physical length.
    """

    id: str
    duration: float = 1.0
    weight: float = 1.0


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_instance`; usable iff ``violations`` is empty."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)

    def __bool__(self) -> bool:  # truthiness == usability
        return self.ok


@dataclass
class EnergySystemInstance:
    """Complete, index-aligned problem description.

    Dense series are positional: ``demand[b, n, t]`` follows the declared
    product/node/time-step order, ``availability[p, n, t]`` follows the order
    of *production* components only, and the existing-capacity blocks follow
    production/grid component order over all investment years but the last
    (the last year is the one being decided).
    """

    products: tuple[Product, ...]
    components: tuple[Component, ...]
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    time_steps: tuple[TimeStep, ...]
    years: tuple[int, ...]
    demand: np.ndarray  # (product, node, time)
    availability: np.ndarray  # (production component, node, time)
    existing_production: np.ndarray  # (production component, node, prior year)
    existing_grid: np.ndarray  # (grid component, edge, prior year)
    ghg_limit: float = math.inf
    interest_rate: float = 0.0

    def __post_init__(self) -> None:
        self.demand = np.asarray(self.demand, dtype=float)
        self.availability = np.asarray(self.availability, dtype=float)
        self.existing_production = np.asarray(self.existing_production, dtype=float)
        self.existing_grid = np.asarray(self.existing_grid, dtype=float)
        self._product_index = {p.id: i for i, p in enumerate(self.products)}
        self._node_index = {n.id: i for i, n in enumerate(self.nodes)}
        self._edge_index = {e.id: i for i, e in enumerate(self.edges)}
        self.production_components = tuple(c for c in self.components if not c.is_grid)
        self.grid_components = tuple(c for c in self.components if c.is_grid)
        self._prod_comp_index = {c.id: i for i, c in enumerate(self.production_components)}
        self._grid_comp_index = {c.id: i for i, c in enumerate(self.grid_components)}
        for arr in (self.demand, self.availability, self.existing_production, self.existing_grid):
            arr.setflags(write=False)

    # -- index lookups -------------------------------------------------
    def product_index(self, product_id: str) -> int:
        return self._product_index[product_id]

    def node_index(self, node_id: str) -> int:
        return self._node_index[node_id]

    def edge_index(self, edge_id: str) -> int:
        return self._edge_index[edge_id]

    def production_index(self, component_id: str) -> int:
        return self._prod_comp_index[component_id]

    def grid_index(self, component_id: str) -> int:
        return self._grid_comp_index[component_id]

    # -- shapes ---------------------------------------------------------
    @property
    def n_products(self) -> int:
        return len(self.products)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_time_steps(self) -> int:
        return len(self.time_steps)

    @property
    def n_prior_years(self) -> int:
        return len(self.years) - 1

    @property
    def decision_year(self) -> int:
        return self.years[-1]

    # -- economics -------------------------------------------------------
    def annuity_divisor(self, component: Component) -> float:
        """Present-value factor turning an invest cost into an annual payment."""
        return npv_factor(self.interest_rate, discount_horizon(component.lifetime, component.discount_period))

    def annualized_invest(self, component: Component, year_pos: int) -> float:
        """Annualized specific invest cost of ``component`` for the investment
        year at position ``year_pos``."""
        return float(component.invest_cost[year_pos]) / self.annuity_divisor(component)

    def existing_capex(self) -> float:
        """Annualized cost of all capacity built in prior investment years."""
        total = 0.0
        for p, comp in enumerate(self.production_components):
            for y in range(self.n_prior_years):
                cap = float(self.existing_production[p, :, y].sum())
                if cap:
                    total += self.annualized_invest(comp, y) * cap
        lengths = np.array([e.length for e in self.edges])
        for g, comp in enumerate(self.grid_components):
            for y in range(self.n_prior_years):
                caps = self.existing_grid[g, :, y]
                if caps.any():
                    total += self.annualized_invest(comp, y) * float(caps @ lengths)
        return total

    # -- derived structure ------------------------------------------------
    def ratio_matrix(self) -> np.ndarray:
        """theta[b, c] over production components."""
        theta = np.zeros((self.n_products, len(self.production_components)))
        for c, comp in enumerate(self.production_components):
            for pid, value in comp.ratio.items():
                theta[self._product_index[pid], c] = value
        return theta

    def grid_product(self, comp: Component) -> tuple[int, float]:
        """(product index, ratio) of a grid component's transported product."""
        entries = [(pid, v) for pid, v in comp.ratio.items() if v != 0.0]
        pid, value = entries[0]
        return self._product_index[pid], value

    def edge_endpoints(self, edge_pos: int) -> tuple[int, int]:
        e = self.edges[edge_pos]
        return self._node_index[e.node_a], self._node_index[e.node_b]

    def production_cap_limit(self, comp: Component, node_id: str) -> float:
        if comp.nodal_capacity_limit is None:
            return math.inf
        value = comp.nodal_capacity_limit.get(node_id)
        return math.inf if value is None else float(value)

    def grid_cap_limit(self, comp: Component, edge_id: str) -> float:
        if comp.nodal_capacity_limit is None:
            return math.inf
        value = comp.nodal_capacity_limit.get(edge_id)
        return math.inf if value is None else float(value)


def validate_instance(instance: EnergySystemInstance) -> ValidationReport:
    """Check identifier integrity, value ranges and cross-references.

    Read-only and side-effect free; an instance is usable by the optimization
    builders iff the returned report carries no violations.
    """
    report = ValidationReport()
    inst = instance
    B, N, L, T = inst.n_products, inst.n_nodes, inst.n_edges, inst.n_time_steps
    P, G = len(inst.production_components), len(inst.grid_components)

    _check_unique(report, "product", [p.id for p in inst.products])
    _check_unique(report, "component", [c.id for c in inst.components])
    _check_unique(report, "node", [n.id for n in inst.nodes])
    _check_unique(report, "edge", [e.id for e in inst.edges])
    _check_unique(report, "time step", [t.id for t in inst.time_steps])

    if len(inst.years) < 1:
        report.add("at least one investment year is required")
    if any(b >= a for b, a in zip(inst.years, inst.years[1:])):
        report.add("investment years must be strictly increasing")
    if not (0.0 <= inst.interest_rate):
        report.add(f"interest rate must be >= 0, got {inst.interest_rate}")
    if not (inst.ghg_limit >= 0.0):
        report.add(f"ghg limit must be >= 0, got {inst.ghg_limit}")

    # temporal structure
    total_weight = 0.0
    for ts in inst.time_steps:
        if ts.duration <= 0:
            report.add(f"time step {ts.id}: duration must be positive")
        if ts.weight <= 0:
            report.add(f"time step {ts.id}: annual weight must be positive")
        total_weight += ts.weight
    if total_weight > HOURS_PER_YEAR + 1e-9:
        report.add(f"annual time step weights sum to {total_weight}, above one year")

    # topology
    node_ids = set(inst._node_index)
    for e in inst.edges:
        if e.node_a not in node_ids or e.node_b not in node_ids:
            report.add(f"edge {e.id}: unknown endpoint")
        if e.node_a == e.node_b:
            report.add(f"edge {e.id}: self-loop")
        if e.length <= 0:
            report.add(f"edge {e.id}: length must be positive")

    # products
    for p in inst.products:
        if p.import_cost is not None and len(p.import_cost) != T:
            report.add(f"product {p.id}: import cost series length != {T}")
        if p.import_cost is not None and np.any(np.asarray(p.import_cost) < 0):
            report.add(f"product {p.id}: import cost must be >= 0")
        if p.import_allowed and p.import_cost is None:
            report.add(f"product {p.id}: import allowed but no cost series given")
        if p.secured_capacity_nodal is not None:
            nodal = np.asarray(p.secured_capacity_nodal, dtype=float)
            if nodal.shape != (N,):
                report.add(f"product {p.id}: nodal secured capacity must have one entry per node")
            elif np.any(nodal < 0):
                report.add(f"product {p.id}: nodal secured capacity must be >= 0")
            elif p.secured_capacity_system is not None:
                total = float(nodal.sum())
                if not math.isclose(total, p.secured_capacity_system, rel_tol=1e-9, abs_tol=1e-9):
                    report.add(
                        f"product {p.id}: system secured capacity {p.secured_capacity_system} "
                        f"!= sum of nodal values {total}"
                    )

    # components
    produced: set[str] = set()
    for c in inst.components:
        if c.kind not in (PRODUCTION, GRID):
            report.add(f"component {c.id}: unknown kind {c.kind!r}")
            continue
        nonzero = {pid: v for pid, v in c.ratio.items() if v != 0.0}
        if not nonzero:
            report.add(f"component {c.id}: needs at least one nonzero ratio entry")
        for pid in c.ratio:
            if pid not in inst._product_index:
                report.add(f"component {c.id}: ratio references unknown product {pid}")
        if len(c.invest_cost) != len(inst.years):
            report.add(f"component {c.id}: invest cost series length != number of investment years")
        if np.any(np.asarray(c.invest_cost) < 0):
            report.add(f"component {c.id}: invest cost must be >= 0")
        if c.op_cost < 0:
            report.add(f"component {c.id}: operating cost must be >= 0")
        if c.op_emission < 0:
            report.add(f"component {c.id}: specific emissions must be >= 0")
        if c.lifetime < 1 or c.discount_period < 1:
            report.add(f"component {c.id}: lifetime and discount period must be >= 1")
        if not (0.0 <= c.capacity_factor <= 1.0):
            report.add(f"component {c.id}: capacity factor must lie in [0, 1]")
        if c.system_capacity_limit is not None and c.system_capacity_limit < 0:
            report.add(f"component {c.id}: system capacity limit must be >= 0")
        if c.nodal_capacity_limit:
            valid_keys = node_ids if not c.is_grid else set(inst._edge_index)
            for key, value in c.nodal_capacity_limit.items():
                if key not in valid_keys:
                    report.add(f"component {c.id}: capacity limit references unknown {key!r}")
                if value < 0:
                    report.add(f"component {c.id}: capacity limit for {key} must be >= 0")
        if c.is_grid:
            positive = [(pid, v) for pid, v in nonzero.items() if v > 0]
            if len(nonzero) != 1 or len(positive) != 1:
                report.add(f"component {c.id}: grid components need exactly one positive ratio entry")
            else:
                pid = positive[0][0]
                prod = inst.products[inst._product_index[pid]] if pid in inst._product_index else None
                if prod is not None and not prod.transportable:
                    report.add(f"component {c.id}: transports non-transportable product {pid}")
            if c.transport_mode not in (TRANSSHIPMENT, DC):
                report.add(f"component {c.id}: transport mode must be transshipment or dc")
            if c.transport_mode == TRANSSHIPMENT:
                if not (0.0 < c.grid_efficiency <= 1.0):
                    report.add(f"component {c.id}: grid efficiency must lie in (0, 1]")
                else:
                    for e in inst.edges:
                        if (1.0 - c.grid_efficiency) * e.length > 1.0 + 1e-12:
                            report.add(
                                f"component {c.id}: loss over edge {e.id} exceeds the transported amount"
                            )
            if c.transport_mode == DC and c.susceptance_per_line <= 0:
                report.add(f"component {c.id}: DC mode needs a positive susceptance")
        else:
            produced.update(pid for pid, v in nonzero.items() if v > 0)

    # series shapes and ranges
    if inst.demand.shape != (B, N, T):
        report.add(f"demand series has shape {inst.demand.shape}, expected {(B, N, T)}")
    elif np.any(~np.isfinite(inst.demand)) or np.any(inst.demand < 0):
        report.add("demand must be finite and >= 0")
    if inst.availability.shape != (P, N, T):
        report.add(f"availability series has shape {inst.availability.shape}, expected {(P, N, T)}")
    elif np.any(~np.isfinite(inst.availability)) or np.any(inst.availability < 0) or np.any(inst.availability > 1):
        report.add("availability must lie in [0, 1]")
    if inst.existing_production.shape != (P, N, inst.n_prior_years):
        report.add(
            f"existing production capacity has shape {inst.existing_production.shape}, "
            f"expected {(P, N, inst.n_prior_years)}"
        )
    elif np.any(inst.existing_production < 0):
        report.add("existing production capacity must be >= 0")
    if inst.existing_grid.shape != (G, L, inst.n_prior_years):
        report.add(
            f"existing grid capacity has shape {inst.existing_grid.shape}, "
            f"expected {(G, L, inst.n_prior_years)}"
        )
    elif np.any(inst.existing_grid < 0):
        report.add("existing grid capacity must be >= 0")

    # cross references: demanded products must be producible somewhere
    if inst.demand.shape == (B, N, T):
        for b, prod in enumerate(inst.products):
            if inst.demand[b].sum() > 0 and prod.id not in produced:
                report.add(f"product {prod.id}: demand exists but no component produces it")

    return report


def _check_unique(report: ValidationReport, label: str, ids: list[str]) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            report.add(f"duplicate {label} id {i!r}")
        seen.add(i)
