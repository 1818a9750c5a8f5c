"""Quasi-static vertical deflection of a bridge deck under moving point loads.

Two routes:

* closed-form influence of a point load on a simply supported beam;
* a static Euler-Bernoulli finite-element solver (Hermite cubic elements,
  deflection + rotation per node) for arbitrary support layouts, including
  vertical springs.

Deflections are in metres, downward negative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError
from .traffic import TrafficTrajectory

log = logging.getLogger(__name__)

G = 9.81  # m/s^2


@dataclass(frozen=True)
class Segment:
    span: float  # m
    E: float  # Pa
    I: float  # m^4
    rho: float = 0.0  # kg/m^3
    A: float = 0.0  # m^2

    @property
    def EI(self) -> float:
        return self.E * self.I


@dataclass(frozen=True)
class Support:
    position: float  # m
    kind: str = "pinned"  # "pinned" or "spring"
    stiffness: float = 0.0  # N/m, springs only


@dataclass(frozen=True)
class BeamModel:
    length: float
    segments: tuple[Segment, ...]
    supports: tuple[Support, ...]
    n_elements: int = 64

    def __post_init__(self) -> None:
        if not self.length > 0:
            raise ConfigError("beam length must be positive")
        if not self.segments:
            raise ConfigError("beam needs at least one segment")
        if abs(sum(s.span for s in self.segments) - self.length) > 1e-9 * self.length:
            raise ConfigError("segment spans must add up to the beam length")
        if any(not s.EI > 0 for s in self.segments):
            raise ConfigError("E*I must be positive on every segment")
        if len(self.supports) < 2:
            raise ConfigError("beam needs at least two supports")
        for s in self.supports:
            if not -1e-9 <= s.position <= self.length + 1e-9:
                raise ConfigError(f"support at {s.position} m lies outside the beam")
            if s.kind not in ("pinned", "spring"):
                raise ConfigError(f"unknown support kind {s.kind!r}")
            if s.kind == "spring" and not s.stiffness > 0:
                raise ConfigError("spring supports need positive stiffness")
        if self.n_elements < 2:
            raise ConfigError("mesh needs at least two elements")

    @classmethod
    def simply_supported(cls, length: float, E: float, I: float, n_elements: int = 64,
                         rho: float = 0.0, A: float = 0.0) -> "BeamModel":
        return cls(length, (Segment(length, E, I, rho, A),),
                   (Support(0.0), Support(length)), n_elements)

    @property
    def uniform_EI(self) -> float | None:
        eis = {s.EI for s in self.segments}
        return eis.pop() if len(eis) == 1 else None

    def EI_at(self, x: np.ndarray) -> np.ndarray:
        edges = np.cumsum([s.span for s in self.segments])
        idx = np.minimum(np.searchsorted(edges, x, side="right"), len(self.segments) - 1)
        return np.array([s.EI for s in self.segments])[idx]


@dataclass(frozen=True)
class SensorLayout:
    positions: tuple[float, ...]  # m along the deck

    @classmethod
    def section_midpoints(cls, boundaries: Sequence[float]) -> "SensorLayout":
        b = list(boundaries)
        return cls(tuple(0.5 * (lo + hi) for lo, hi in zip(b[:-1], b[1:])))

    @property
    def n(self) -> int:
        return len(self.positions)


@dataclass
class ResponseMatrix:
    values: np.ndarray  # (T, n) deflection in m
    tick_duration: float  # s between rows
    sensors: SensorLayout
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.sensors.n:
            raise ValueError(f"response of shape {v.shape} does not match {self.sensors.n} sensors")
        if not np.all(np.isfinite(v)):
            raise NumericalError("response contains non-finite values")
        self.values = v

    @property
    def n_instants(self) -> int:
        return self.values.shape[0]


def ss_influence(load_pos, sensor_pos, P, L: float, EI: float):
    """Deflection at ``sensor_pos`` of a simply supported span under load ``P`` at ``load_pos``.

    Broadcasts over array arguments. Downward load gives negative deflection.
    """
    a = np.asarray(load_pos, dtype=float)
    x = np.asarray(sensor_pos, dtype=float)
    if not EI > 0:
        raise ConfigError("EI must be positive")
    tol = 1e-9 * L
    if np.any(a < -tol) or np.any(a > L + tol) or np.any(x < -tol) or np.any(x > L + tol):
        raise ConfigError("load and sensor positions must lie within [0, L]")
    # Sensor left of load: P b x (L^2 - b^2 - x^2) / (6 L EI), b = L - a; mirror otherwise.
    left = x <= a
    b = L - a
    d_left = b * x * (L * L - b * b - x * x)
    xr = L - x
    d_right = a * xr * (L * L - a * a - xr * xr)
    d = np.where(left, d_left, d_right) / (6.0 * L * EI)
    out = -np.asarray(P, dtype=float) * d
    return out if out.ndim else float(out)


def _hermite(xi: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Cubic Hermite shape functions, shape (..., 4), for DOFs (w1, th1, w2, th2)."""
    xi2 = xi * xi
    xi3 = xi2 * xi
    return np.stack([1 - 3 * xi2 + 2 * xi3,
                     h * (xi - 2 * xi2 + xi3),
                     3 * xi2 - 2 * xi3,
                     h * (xi3 - xi2)], axis=-1)


@dataclass
class FeSolution:
    nodes: np.ndarray  # (n_nodes,) m
    u: np.ndarray  # (2 * n_nodes,) interleaved deflection, rotation

    @property
    def deflections(self) -> np.ndarray:
        return self.u[0::2]

    @property
    def rotations(self) -> np.ndarray:
        return self.u[1::2]

    def deflection_at(self, x) -> np.ndarray:
        e, xi, h = _locate(self.nodes, np.atleast_1d(np.asarray(x, dtype=float)))
        dofs = _element_dofs(e)
        return np.einsum("pk,pk->p", _hermite(xi, h), self.u[dofs])


def _locate(nodes: np.ndarray, x: np.ndarray):
    e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    h = nodes[e + 1] - nodes[e]
    return e, (x - nodes[e]) / h, h


def _element_dofs(e: np.ndarray) -> np.ndarray:
    return np.stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3], axis=-1)


class BeamSolver:
    """Assembled and factorised stiffness of a :class:`BeamModel`.

    The mesh is ``n_elements`` equal elements refined so that every support
    and segment joint sits on a node. Pinned supports remove the deflection
    DOF; springs add to its diagonal.
    """

    def __init__(self, model: BeamModel):
        self.model = model
        grid = np.linspace(0.0, model.length, model.n_elements + 1)
        extra = [s.position for s in model.supports]
        extra += list(np.cumsum([s.span for s in model.segments])[:-1])
        nodes = np.sort(np.concatenate([grid, np.clip(extra, 0.0, model.length)]))
        keep = np.concatenate([[True], np.diff(nodes) > 1e-9 * model.length])
        self.nodes = nodes[keep]
        n_dof = 2 * len(self.nodes)

        K = np.zeros((n_dof, n_dof))
        h = np.diff(self.nodes)
        ei = model.EI_at(0.5 * (self.nodes[:-1] + self.nodes[1:]))
        for i, (he, eie) in enumerate(zip(h, ei)):
            k = eie / he**3 * np.array([
                [12, 6 * he, -12, 6 * he],
                [6 * he, 4 * he * he, -6 * he, 2 * he * he],
                [-12, -6 * he, 12, -6 * he],
                [6 * he, 2 * he * he, -6 * he, 4 * he * he],
            ])
            d = slice(2 * i, 2 * i + 4)
            K[d, d] += k

        fixed = []
        for s in model.supports:
            j = int(np.argmin(np.abs(self.nodes - s.position)))
            if s.kind == "pinned":
                fixed.append(2 * j)
            else:
                K[2 * j, 2 * j] += s.stiffness
        self.free = np.setdiff1d(np.arange(n_dof), fixed)
        self.n_dof = n_dof
        Kff = K[np.ix_(self.free, self.free)]

        # Scale-free singularity test: eigenvalues of the diagonally scaled matrix.
        dscale = 1.0 / np.sqrt(np.diag(Kff))
        ev = np.linalg.eigvalsh(Kff * dscale[:, None] * dscale[None, :])
        if ev[0] <= 1e-13 * ev[-1]:
            raise NumericalError(
                "stiffness matrix is singular: the supports do not restrain the beam (mechanism)"
            )
        self._scale = dscale
        self._chol = scipy.linalg.cho_factor(Kff * dscale[:, None] * dscale[None, :])

    def load_vector(self, loads: Sequence[tuple[float, float]]) -> np.ndarray:
        F = np.zeros(self.n_dof)
        if len(loads) == 0:
            return F
        pos = np.array([p for p, _ in loads], dtype=float)
        mag = np.array([q for _, q in loads], dtype=float)
        L = self.model.length
        if np.any(pos < -1e-9 * L) or np.any(pos > L * (1 + 1e-9)):
            raise ConfigError("loads must lie within the span")
        e, xi, h = _locate(self.nodes, pos)
        # Downward loads, consistent nodal forces via the shape functions.
        np.add.at(F, _element_dofs(e), -mag[:, None] * _hermite(xi, h))
        return F

    def solve_vector(self, F: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dof)
        y = scipy.linalg.cho_solve(self._chol, F[self.free] * self._scale)
        u[self.free] = y * self._scale
        if not np.all(np.isfinite(u)):
            raise NumericalError("non-finite displacements")
        return u

    def solve(self, loads: Sequence[tuple[float, float]]) -> FeSolution:
        return FeSolution(self.nodes, self.solve_vector(self.load_vector(loads)))

    def influence(self, sensor_pos: Sequence[float], load_pos: np.ndarray) -> np.ndarray:
        """Deflection at each sensor per newton of downward load, shape (n_sensors, n_loads).

        Uses Maxwell-Betti: one solve per sensor, then shape-function
        interpolation of that field at the load positions.
        """
        load_pos = np.asarray(load_pos, dtype=float)
        out = np.empty((len(sensor_pos), len(load_pos)))
        for i, s in enumerate(sensor_pos):
            field_ = FeSolution(self.nodes, self.solve_vector(self.load_vector([(s, 1.0)])))
            out[i] = field_.deflection_at(load_pos)
        return out


def fe_static_solve(model: BeamModel, loads: Sequence[tuple[float, float]]) -> FeSolution:
    """Solve ``K u = F`` for point loads ``(position_m, P_newton)``."""
    return BeamSolver(model).solve(loads)


@dataclass
class InstantLoads:
    """Vehicles on the deck at each sampling instant, in long format."""

    instant: np.ndarray  # sampling-instant index
    position: np.ndarray  # m
    weight: np.ndarray  # kg
    vehicle: np.ndarray  # trajectory vehicle id
    n_instants: int
    sample_dt: float


def instant_loads(traj: TrafficTrajectory, sample_dt: float, n_instants: int | None = None) -> InstantLoads:
    """Vehicle positions at every sampling instant.

    Load positions are cell centres. Between ticks a vehicle present at both
    ticks moves linearly; a vehicle about to leave keeps its last velocity; a
    vehicle that has not yet entered is absent.
    """
    tick = traj.tick_duration
    ratio = tick / sample_dt
    sub = int(round(ratio))
    if sub < 1 or abs(ratio - sub) > 1e-9:
        raise ConfigError(f"tick {tick} s is not an integer multiple of sample_dt {sample_dt} s")
    max_instants = (traj.n_ticks - 1) * sub + 1
    if n_instants is None:
        n_instants = max_instants
    if n_instants > max_instants:
        raise ConfigError(f"trajectory of {traj.n_ticks} ticks covers only {max_instants} instants")

    cl = traj.cell_length
    ids = traj.vehicle_ids
    inst, pos, vid = [], [], []
    t_idx, c_idx = np.nonzero(ids >= 0)
    v_at = ids[t_idx, c_idx]
    # Cell each vehicle occupies one tick later, -1 once it has left.
    next_pos = np.full(len(t_idx), -1, dtype=np.int64)
    order = np.lexsort((t_idx, v_at))
    vs, ts, cs = v_at[order], t_idx[order], c_idx[order]
    same_next = (vs[1:] == vs[:-1]) & (ts[1:] == ts[:-1] + 1)
    nxt = np.full(len(vs), -1, dtype=np.int64)
    nxt[:-1][same_next] = cs[1:][same_next]
    next_pos[order] = nxt
    vel = traj.velocities[t_idx, c_idx]

    for k in range(sub):
        f = k / sub
        sel = t_idx * sub + k < n_instants
        if k > 0:
            sel &= t_idx < traj.n_ticks - 1
        tt, cc, nn, vv, ii = t_idx[sel], c_idx[sel], next_pos[sel], vel[sel], v_at[sel]
        target = np.where(nn >= 0, nn, cc + vv)
        p = (cc + f * (target - cc) + 0.5) * cl
        on = p <= traj.length
        inst.append(tt[on] * sub + k)
        pos.append(p[on])
        vid.append(ii[on])
    inst_a = np.concatenate(inst)
    order = np.lexsort((np.concatenate(pos), inst_a))
    vid_a = np.concatenate(vid)[order]
    return InstantLoads(inst_a[order], np.concatenate(pos)[order],
                        traj.vehicle_weights[vid_a], vid_a, n_instants, sample_dt)


def synthesize_response(traj: TrafficTrajectory, model: BeamModel, sensors: SensorLayout,
                        sample_dt: float, n_instants: int | None = None,
                        route: str = "auto", loads: InstantLoads | None = None) -> ResponseMatrix:
    """Quasi-static sensor deflections for every sampling instant.

    Each vehicle is a point force ``weight * g``; deflections superpose.
    ``route`` picks the closed-form simply-supported influence (``"closed"``),
    the finite-element influence (``"fe"``), or decides from the model
    (``"auto"``: closed form for a uniform two-pin beam).
    """
    if abs(traj.length - model.length) > 1e-9 * model.length:
        raise ConfigError(
            f"trajectory covers {traj.length} m but the beam is {model.length} m long"
        )
    if loads is None:
        loads = instant_loads(traj, sample_dt, n_instants)
    if route == "auto":
        two_pins = (len(model.supports) == 2 and all(s.kind == "pinned" for s in model.supports)
                    and {round(s.position, 9) for s in model.supports} == {0.0, round(model.length, 9)})
        route = "closed" if two_pins and model.uniform_EI is not None else "fe"
    if route == "closed":
        EI = model.uniform_EI
        if EI is None:
            raise ConfigError("closed-form route needs a uniform beam")
        infl = ss_influence(loads.position[None, :], np.asarray(sensors.positions)[:, None],
                            1.0, model.length, EI)
    elif route == "fe":
        infl = BeamSolver(model).influence(sensors.positions, loads.position)
    else:
        raise ConfigError(f"unknown response route {route!r}")

    values = np.zeros((loads.n_instants, sensors.n))
    force = loads.weight * G
    for i in range(sensors.n):
        values[:, i] = np.bincount(loads.instant, weights=infl[i] * force, minlength=loads.n_instants)
    meta = {"response_model": "quasi-static", "g": G, "route": route,
            "n_elements": model.n_elements}
    return ResponseMatrix(values, sample_dt, sensors, meta)
