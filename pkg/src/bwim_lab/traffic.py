"""One-way, single-lane random traffic on a bridge deck.

Vehicles live on a row of equal cells (at most one vehicle per cell) and move
under Nagel-Schreckenberg rules. Vehicle weights follow a per-type mixture of
lognormal distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError

N_TYPES = 5
MAX_WEIGHT_RETRIES = 10_000


@dataclass(frozen=True)
class VehicleTypeSpec:
    """Mixture-of-lognormals weight law for one vehicle class.

    ``components`` holds ``(w, mu, sigma)`` triples; ``mu`` and ``sigma`` are
    the mean and std of ``ln(weight_kg)``.
    """

    type_id: int
    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        ws = [c[0] for c in self.components]
        if not self.components:
            raise ConfigError(f"type {self.type_id}: no mixture components")
        if any(w < 0 for w in ws):
            raise ConfigError(f"type {self.type_id}: negative mixture weight")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"type {self.type_id}: mixture weights sum to {sum(ws)!r}")
        if any(not c[2] > 0 for c in self.components):
            raise ConfigError(f"type {self.type_id}: sigma must be positive")

    @classmethod
    def from_two(cls, type_id: int, c1: tuple[float, float, float],
                 c2: tuple[float, float, float], mu3: float, sigma3: float) -> "VehicleTypeSpec":
        """Build a three-component law whose last weight is ``1 - w1 - w2``."""
        w3 = 1.0 - c1[0] - c2[0]
        return cls(type_id, (tuple(c1), tuple(c2), (w3, mu3, sigma3)))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    def mean(self) -> float:
        """Analytic mean weight in kg (no cap)."""
        return float(sum(w * math.exp(mu + 0.5 * s * s) for w, mu, s in self.components))

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        """Analytic mixture CDF (no cap)."""
        from scipy.special import ndtr

        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        lx = np.log(x[pos])
        for w, mu, s in self.components:
            out[pos] += w * ndtr((lx - mu) / s)
        return out


# Mixed-lognormal fits of vehicle weight (kg) for the five vehicle classes.
# Type IV mu2 uses 9.345 (decimal comma normalised).
# Type V mu2 = 16.05 yields absurd weights; the weight cap rejects those draws.
DEFAULT_VEHICLE_TYPES: tuple[VehicleTypeSpec, ...] = (
    VehicleTypeSpec.from_two(0, (0.337, 4.970, 0.130), (0.545, 7.144, 0.211), 7.883, 0.373),
    VehicleTypeSpec.from_two(1, (0.056, 8.010, 0.670), (0.065, 4.061, 0.060), 8.111, 0.543),
    VehicleTypeSpec.from_two(2, (0.572, 9.067, 0.370), (0.293, 5.815, 0.006), 9.371, 0.100),
    VehicleTypeSpec.from_two(3, (0.134, 9.390, 0.385), (0.311, 9.345, 0.149), 4.936, 0.184),
    VehicleTypeSpec.from_two(4, (0.558, 9.762, 0.256), (0.352, 16.050, 0.317), 10.690, 0.258),
)

# Heavy-vehicle-leaning mix; see README ("Traffic defaults").
DEFAULT_TYPE_PROBS: tuple[float, ...] = (0.075, 0.075, 0.075, 0.075, 0.7)


def sample_vehicle_weight(spec: VehicleTypeSpec, rng: np.random.Generator,
                          weight_cap: float | None = None) -> float:
    """Draw one vehicle weight in kg, redrawing anything above ``weight_cap``."""
    ws = spec.weights
    for _ in range(MAX_WEIGHT_RETRIES):
        i = rng.choice(len(ws), p=ws)
        _, mu, sigma = spec.components[i]
        w = math.exp(rng.normal(mu, sigma))
        if weight_cap is None or w <= weight_cap:
            return w
    raise ConfigError(
        f"type {spec.type_id}: no weight under cap {weight_cap} after {MAX_WEIGHT_RETRIES} draws"
    )


def sample_vehicle_weights(spec: VehicleTypeSpec, rng: np.random.Generator, size: int,
                           weight_cap: float | None = None) -> np.ndarray:
    """Vectorised version of :func:`sample_vehicle_weight` for bulk draws."""
    out = np.empty(size)
    filled = 0
    mus = np.array([c[1] for c in spec.components])
    sigmas = np.array([c[2] for c in spec.components])
    for _ in range(MAX_WEIGHT_RETRIES):
        need = size - filled
        if need == 0:
            return out
        idx = rng.choice(len(mus), size=need, p=spec.weights)
        w = np.exp(rng.normal(mus[idx], sigmas[idx]))
        if weight_cap is not None:
            w = w[w <= weight_cap]
        out[filled:filled + len(w)] = w
        filled += len(w)
    if filled < size:
        raise ConfigError(f"type {spec.type_id}: cap {weight_cap} rejects nearly all draws")
    return out


@dataclass(frozen=True)
class Vehicle:
    id: int
    type_id: int
    weight: float  # kg
    velocity: int  # cells per tick
    position: int  # cell index


@dataclass(frozen=True)
class CaParams:
    n_cells: int
    cell_length: float
    v_max: int
    p_slow: float = 0.3
    p_inject: float = 0.3
    type_probs: tuple[float, ...] = DEFAULT_TYPE_PROBS
    weight_cap: float | None = 60_000.0
    seed: int = 0
    warmup_ticks: int = 0
    tick_duration: float = 1.0
    vehicle_types: tuple[VehicleTypeSpec, ...] = field(default=DEFAULT_VEHICLE_TYPES, repr=False)

    def __post_init__(self) -> None:
        if self.n_cells < 1:
            raise ConfigError("n_cells must be >= 1")
        if not self.cell_length > 0:
            raise ConfigError("cell_length must be positive")
        if self.v_max < 1:
            raise ConfigError("v_max must be >= 1")
        for name in ("p_slow", "p_inject"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} outside [0, 1]")
        if len(self.type_probs) != len(self.vehicle_types):
            raise ConfigError("type_probs must have one entry per vehicle type")
        if any(p < 0 for p in self.type_probs) or abs(sum(self.type_probs) - 1.0) > 1e-9:
            raise ConfigError(f"type_probs {self.type_probs} must be nonnegative and sum to 1")
        if self.weight_cap is not None and not self.weight_cap > 0:
            raise ConfigError("weight_cap must be positive")
        if self.warmup_ticks < 0:
            raise ConfigError("warmup_ticks must be >= 0")

    @property
    def length(self) -> float:
        return self.n_cells * self.cell_length


@dataclass(frozen=True)
class RoadState:
    """Occupancy of every cell at one tick; ``next_id`` feeds new vehicle ids."""

    cells: tuple[Vehicle | None, ...]
    cell_length: float
    next_id: int = 0

    @classmethod
    def empty(cls, n_cells: int, cell_length: float) -> "RoadState":
        return cls((None,) * n_cells, cell_length)

    @classmethod
    def from_vehicles(cls, n_cells: int, cell_length: float,
                      vehicles: Sequence[Vehicle], next_id: int | None = None) -> "RoadState":
        cells: list[Vehicle | None] = [None] * n_cells
        for v in vehicles:
            if not 0 <= v.position < n_cells:
                raise ValueError(f"vehicle {v.id} at cell {v.position} is off the road")
            if cells[v.position] is not None:
                raise ValueError(f"cell {v.position} holds two vehicles")
            cells[v.position] = v
        if next_id is None:
            next_id = max((v.id for v in vehicles), default=-1) + 1
        return cls(tuple(cells), cell_length, next_id)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def vehicles(self) -> list[Vehicle]:
        """Vehicles ordered from the entry (cell 0) towards the exit."""
        return [v for v in self.cells if v is not None]


def nasch_step(state: RoadState, params: CaParams, rng: np.random.Generator) -> RoadState:
    """Advance the road by one tick.

    Every vehicle accelerates by one (up to ``v_max``), brakes to the free gap
    ahead, randomly slows by one with ``p_slow``, then moves. Vehicles running
    past the last cell leave. A new vehicle may then enter cell 0.
    """
    vehicles = state.vehicles()
    slow = rng.random(len(vehicles))
    cells: list[Vehicle | None] = [None] * state.n_cells
    for i, v in enumerate(vehicles):
        speed = min(v.velocity + 1, params.v_max)
        if i + 1 < len(vehicles):
            speed = min(speed, vehicles[i + 1].position - v.position - 1)
        if speed > 0 and slow[i] < params.p_slow:
            speed -= 1
        pos = v.position + speed
        if pos < state.n_cells:
            cells[pos] = replace(v, velocity=speed, position=pos)

    next_id = state.next_id
    if cells[0] is None and rng.random() < params.p_inject:
        type_id = int(rng.choice(len(params.type_probs), p=params.type_probs))
        weight = sample_vehicle_weight(params.vehicle_types[type_id], rng, params.weight_cap)
        cells[0] = Vehicle(next_id, type_id, weight, 0, 0)
        next_id += 1
    return RoadState(tuple(cells), state.cell_length, next_id)


@dataclass
class TrafficTrajectory:
    """Recorded occupancy over time, stored densely.

    ``vehicle_ids[t, c]`` is the id of the vehicle in cell ``c`` at tick ``t``
    (-1 when empty); ``velocities`` follows the same layout. Per-vehicle
    attributes are indexed by id.
    """

    vehicle_ids: np.ndarray
    velocities: np.ndarray
    vehicle_types: np.ndarray
    vehicle_weights: np.ndarray
    cell_length: float
    tick_duration: float = 1.0

    def __post_init__(self) -> None:
        if self.vehicle_ids.shape != self.velocities.shape or self.vehicle_ids.ndim != 2:
            raise ValueError("vehicle_ids and velocities must be equal-shape 2-D arrays")

    @property
    def n_ticks(self) -> int:
        return self.vehicle_ids.shape[0]

    @property
    def n_cells(self) -> int:
        return self.vehicle_ids.shape[1]

    @property
    def length(self) -> float:
        return self.n_cells * self.cell_length

    def __len__(self) -> int:
        return self.n_ticks

    def __getitem__(self, t: int) -> RoadState:
        return self.state(t)

    def __iter__(self) -> Iterator[RoadState]:
        for t in range(self.n_ticks):
            yield self.state(t)

    def state(self, t: int) -> RoadState:
        ids = self.vehicle_ids[t]
        cells = tuple(
            None if vid < 0 else Vehicle(int(vid), int(self.vehicle_types[vid]),
                                         float(self.vehicle_weights[vid]),
                                         int(self.velocities[t, c]), c)
            for c, vid in enumerate(ids)
        )
        return RoadState(cells, self.cell_length, len(self.vehicle_weights))

    def cell_weights(self) -> np.ndarray:
        """Weight (kg) in every cell at every tick, zero where empty."""
        w = np.where(self.vehicle_ids >= 0,
                     self.vehicle_weights[np.maximum(self.vehicle_ids, 0)], 0.0)
        return w

    @classmethod
    def from_states(cls, states: Sequence[RoadState], tick_duration: float = 1.0) -> "TrafficTrajectory":
        if not states:
            raise ValueError("need at least one state")
        n_cells = states[0].n_cells
        ids = np.full((len(states), n_cells), -1, dtype=np.int64)
        vel = np.zeros((len(states), n_cells), dtype=np.int64)
        types: dict[int, int] = {}
        weights: dict[int, float] = {}
        for t, s in enumerate(states):
            if s.n_cells != n_cells or s.cell_length != states[0].cell_length:
                raise ValueError("all states must share the road geometry")
            for v in s.vehicles():
                ids[t, v.position] = v.id
                vel[t, v.position] = v.velocity
                types[v.id] = v.type_id
                weights[v.id] = v.weight
        n_ids = max(weights, default=-1) + 1
        vt = np.full(n_ids, -1, dtype=np.int64)
        vw = np.zeros(n_ids)
        for vid in weights:
            vt[vid] = types[vid]
            vw[vid] = weights[vid]
        return cls(ids, vel, vt, vw, states[0].cell_length, tick_duration)


def simulate(params: CaParams, n_ticks: int) -> TrafficTrajectory:
    """Run the automaton from an empty road and record ``n_ticks`` states.

    ``params.warmup_ticks`` steps are run first and discarded. The result is
    a pure function of ``params`` (including its seed).
    """
    if n_ticks < 1:
        raise ConfigError("n_ticks must be >= 1")
    rng = np.random.default_rng(params.seed)
    state = RoadState.empty(params.n_cells, params.cell_length)
    for _ in range(params.warmup_ticks):
        state = nasch_step(state, params, rng)

    ids = np.full((n_ticks, params.n_cells), -1, dtype=np.int64)
    vel = np.zeros((n_ticks, params.n_cells), dtype=np.int64)
    seen: dict[int, tuple[int, float]] = {}
    for t in range(n_ticks):
        state = nasch_step(state, params, rng)
        for v in state.vehicles():
            ids[t, v.position] = v.id
            vel[t, v.position] = v.velocity
            seen[v.id] = (v.type_id, v.weight)
    # Renumber so ids index straight into the per-vehicle arrays.
    raw = np.array(sorted(seen), dtype=np.int64)
    occupied = ids >= 0
    ids[occupied] = np.searchsorted(raw, ids[occupied])
    types = np.array([seen[i][0] for i in raw.tolist()], dtype=np.int64)
    weights = np.array([seen[i][1] for i in raw.tolist()], dtype=float)
    return TrafficTrajectory(ids, vel, types, weights, params.cell_length, params.tick_duration)


def section_cell_bounds(n_cells: int, cell_length: float, section_length: float) -> list[tuple[int, int]]:
    """Cell index ranges ``[lo, hi)`` of consecutive sections; the last may be short."""
    ratio = section_length / cell_length
    per = int(round(ratio))
    if per < 1 or abs(ratio - per) > 1e-9:
        raise ConfigError(
            f"section length {section_length} m is not a multiple of the {cell_length} m cell"
        )
    return [(lo, min(lo + per, n_cells)) for lo in range(0, n_cells, per)]


def avg_vehicles_per_section(traj: TrafficTrajectory, section_length: float) -> float:
    """Mean vehicle count per section, averaged over sections and ticks."""
    bounds = section_cell_bounds(traj.n_cells, traj.cell_length, section_length)
    if traj.n_ticks == 0:
        return 0.0
    occupied = int(np.count_nonzero(traj.vehicle_ids >= 0))
    return occupied / (traj.n_ticks * len(bounds))
