"""Closed-loop hybrid simulation with mode switching and bound bookkeeping.

The concrete plant and the transformed abstraction are integrated together
with classical RK4; the active mode is frozen within a step and boundary
crossings are localized by bisecting the step.  Every sample records the
tracking error, the simulation-function value, the running invariant-level
threshold, and the certified output-error level.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .certificate import Certificate, gain_slopes, verify_lmi
from .errors import (
    DimensionMismatchError,
    EmptyScheduleError,
    EmptyTrajectoryError,
    NoCellError,
    NonFiniteStateError,
    NonMonotoneTimesError,
    PwaHierError,
    UncertifiedModeError,
)
from .linalg import as_vector
from .polytope import AFFINE, MEMBERSHIP_SLACK, Partition, locate_mode
from .relation import (
    Interface,
    JointSystem,
    RelationMaps,
    assemble_joint_linear,
    assemble_joint_pwa,
)
from .systems import DisturbanceSignal, LinearAbstraction, PwaAbstraction, PwaSystem

#: Crossing times are localized to a bracket narrower than this (seconds).
CROSSING_BRACKET = 1e-10

#: Bisection iterations per crossing.
BISECTION_CAP = 40

#: Mode switches tolerated within one output step before giving up.
_SWITCH_CAP = 64


def step_rk4(f: Callable[[np.ndarray, float], np.ndarray], x, t: float, h: float) -> np.ndarray:
    """One classical four-stage Runge-Kutta step of width ``h``."""
    if not h > 0.0:
        raise ValueError(f"step width must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(f"non-finite state after step at t={t}")
    return out


@dataclass(frozen=True)
class ReferenceSchedule:
    """Piecewise-constant, right-continuous reference for the transformed
    abstraction input."""

    times: np.ndarray
    values: np.ndarray

    def value(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(idx, 0)]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def reference_schedule(waypoints: Sequence[tuple[float, Sequence[float]]]) -> ReferenceSchedule:
    """Build a schedule from ``(time, value)`` waypoints.

    Times must strictly increase and start at zero; lookups are
    right-continuous (a waypoint's value applies from its time onward).
    """
    if not waypoints:
        raise EmptyScheduleError("schedule needs at least one waypoint")
    times = np.array([float(t) for t, _ in waypoints])
    if times[0] != 0.0:
        raise NonMonotoneTimesError("first waypoint must be at t=0")
    if np.any(np.diff(times) <= 0.0):
        raise NonMonotoneTimesError("waypoint times must strictly increase")
    values = np.array([as_vector(v, "waypoint value") for _, v in waypoints])
    return ReferenceSchedule(times, values)


@dataclass(frozen=True)
class CrossingEvent:
    """Bisection bracket around one cell-boundary crossing."""

    t_inside: float
    t_outside: float
    margin_inside: float
    margin_outside: float
    old_label: tuple
    new_label: tuple

    @property
    def width(self) -> float:
        return self.t_outside - self.t_inside


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop experiment needs."""

    system: PwaSystem
    abstraction: Union[LinearAbstraction, PwaAbstraction]
    relation: RelationMaps
    interface: Interface
    certificate: Certificate
    schedule: ReferenceSchedule
    disturbance: DisturbanceSignal
    x1_0: np.ndarray
    x2_0: np.ndarray
    t_end: float
    h: float
    pairing: Optional[tuple[int, ...]] = None
    joint: Optional[JointSystem] = None

    def __post_init__(self):
        object.__setattr__(self, "x1_0", as_vector(self.x1_0, "x1_0"))
        object.__setattr__(self, "x2_0", as_vector(self.x2_0, "x2_0"))
        if self.t_end <= 0.0:
            raise EmptyTrajectoryError(f"t_end must be positive, got {self.t_end}")
        if not self.h > 0.0:
            raise ValueError(f"step must be positive, got {self.h}")
        if self.x1_0.shape[0] != self.system.n:
            raise DimensionMismatchError("x1_0 does not match the state dimension")
        if self.x2_0.shape[0] != self.abstraction.m:
            raise DimensionMismatchError("x2_0 does not match the abstraction dimension")
        if self.disturbance.dim != self.system.n:
            raise DimensionMismatchError("disturbance does not match the state dimension")
        declared = min(mode.c_bound for mode in self.system.modes)
        if self.disturbance.sup_norm() > declared + 1e-12:
            raise ValueError(
                f"disturbance supremum {self.disturbance.sup_norm():.6g} exceeds "
                f"the declared mode bound {declared:.6g}"
            )
        if self.joint is None:
            if isinstance(self.abstraction, PwaAbstraction):
                if self.pairing is None:
                    raise DimensionMismatchError("PWA abstraction requires a pairing")
                joint = assemble_joint_pwa(
                    self.system, self.abstraction, self.pairing,
                    self.relation, self.interface,
                )
            else:
                joint = assemble_joint_linear(
                    self.system, self.abstraction, self.relation, self.interface
                )
            object.__setattr__(self, "joint", joint)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled closed-loop run with certificate bookkeeping.

    ``mode_j`` stays zero for linear abstractions.  ``b`` is the
    invariant-level threshold with the running abstraction-state supremum,
    so it is nondecreasing between mode switches.
    """

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    xtilde: np.ndarray
    u1: np.ndarray
    u2bar: np.ndarray
    mode_i: np.ndarray
    mode_j: np.ndarray
    err: np.ndarray
    V: np.ndarray
    b: np.ndarray
    delta: np.ndarray
    kappa: float
    u2_sup: float
    c_sup: float
    crossings: tuple[CrossingEvent, ...] = field(default=())

    def __len__(self) -> int:
        return self.t.shape[0]


class _Runner:
    """Single-run integration state; not part of the public surface."""

    def __init__(self, s: Scenario):
        self.s = s
        self.joint = s.joint
        self.n = s.system.n
        self.m = s.joint.m
        self.part = s.system.partition
        self.is_pwa = isinstance(s.abstraction, PwaAbstraction)
        self.regions: Optional[Partition] = (
            Partition(tuple(s.abstraction.concrete_cells)) if self.is_pwa else None
        )
        self.pairing = s.pairing if self.is_pwa else None
        dist = s.disturbance
        self.dist_offset = dist.offset if dist.kind != "zero" else 0.0
        self.dist_amplitude = dist.amplitude if dist.kind == "sinusoid" else 0.0
        self.mask_ext = np.concatenate([dist.mask, np.zeros(self.m)])
        # stacked closed-loop dynamics per concrete mode: z = (x1, x2)
        self.Z = []
        self.BU = []
        for i, mode in enumerate(s.system.modes):
            K, R, Q, L = (s.interface.K[i], s.interface.R[i],
                          s.interface.Q[i], s.interface.L[i])
            P = s.relation.P[i]
            if self.is_pwa:
                am = s.abstraction.modes[self.pairing[i]]
                G, closed_abs = am.G, am.transformed()
            else:
                G, closed_abs = s.abstraction.G, s.abstraction.transformed()
            Z = np.zeros((self.n + self.m, self.n + self.m))
            Z[: self.n, : self.n] = mode.A + mode.B @ K
            Z[: self.n, self.n:] = mode.B @ (Q + R @ L - K @ P)
            Z[self.n:, self.n:] = closed_abs
            self.Z.append(Z)
            self.BU.append(np.vstack([mode.B @ R, G]))

    # -- membership ---------------------------------------------------------

    def _margin(self, x1: np.ndarray, i: int, j: int) -> float:
        cell = self.part.cells[i]
        margin = float(np.min(cell.E @ x1 - cell.f))
        if self.is_pwa:
            reg = self.regions.cells[j]
            margin = min(margin, float(np.min(reg.E @ x1 - reg.f)))
        return margin

    def _locate_j(self, x1: np.ndarray, i: int, prev_j: int) -> int:
        if not self.is_pwa:
            return 0
        j = locate_mode(self.regions, x1, previous=prev_j)
        want = self.pairing[i]
        if j != want:
            if self.regions.cells[want].contains(x1):
                return want
            raise UncertifiedModeError(
                f"state entered region {j} while mode {i} is certified "
                f"against region {want}"
            )
        return j

    # -- integration --------------------------------------------------------

    def _rk4(self, z: np.ndarray, t: float, h: float, i: int, uvec: np.ndarray) -> np.ndarray:
        """One RK4 step of the frozen-mode closed loop; the disturbance phase
        is evaluated per stage."""
        Z = self.Z[i]
        if self.dist_amplitude != 0.0:
            sins = np.sin(np.array([t, t + 0.5 * h, t + h]))
            s0, s1, s2 = self.dist_offset + self.dist_amplitude * sins
        else:
            s0 = s1 = s2 = self.dist_offset
        k1 = Z @ z + uvec + s0 * self.mask_ext
        k2 = Z @ (z + 0.5 * h * k1) + uvec + s1 * self.mask_ext
        k3 = Z @ (z + 0.5 * h * k2) + uvec + s1 * self.mask_ext
        k4 = Z @ (z + h * k3) + uvec + s2 * self.mask_ext
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def advance(self, z: np.ndarray, t: float, h: float, i: int, j: int,
                u2val: np.ndarray, events: list) -> tuple[np.ndarray, int, int]:
        """Advance exactly ``h`` with the reference value frozen at the step
        start, splitting the step at every detected cell-boundary crossing."""
        uvec = self.BU[i] @ u2val
        remaining = h
        for _ in range(_SWITCH_CAP):
            if remaining <= 1e-15:
                return z, i, j
            trial = self._rk4(z, t, remaining, i, uvec)
            if not np.isfinite(trial).all():
                raise NonFiniteStateError(f"non-finite state near t={t}")
            if self._margin(trial[: self.n], i, j) >= -MEMBERSHIP_SLACK:
                return trial, i, j
            # bisect the exit point of the (i, j) membership along the step
            lo, hi = 0.0, 1.0
            m_lo = self._margin(z[: self.n], i, j)
            m_hi = self._margin(trial[: self.n], i, j)
            z_hi = trial
            for _ in range(BISECTION_CAP):
                if (hi - lo) * remaining <= CROSSING_BRACKET:
                    break
                mid = 0.5 * (lo + hi)
                z_mid = self._rk4(z, t, mid * remaining, i, uvec)
                m_mid = self._margin(z_mid[: self.n], i, j)
                if m_mid >= -MEMBERSHIP_SLACK:
                    lo, m_lo = mid, m_mid
                else:
                    hi, m_hi, z_hi = mid, m_mid, z_mid
            committed = hi * remaining
            z = z_hi
            old = (i, j)
            x1 = z[: self.n]
            try:
                i = locate_mode(self.part, x1, previous=i)
            except NoCellError as exc:
                raise NoCellError(f"t={t + committed:.6f}: {exc}") from exc
            j = self._locate_j(x1, i, j)
            events.append(CrossingEvent(
                t_inside=t + lo * remaining,
                t_outside=t + committed,
                margin_inside=m_lo,
                margin_outside=m_hi,
                old_label=old,
                new_label=(i, j),
            ))
            t += committed
            remaining -= committed
            uvec = self.BU[i] @ u2val
        raise PwaHierError(
            f"more than {_SWITCH_CAP} mode switches within one step at t={t}"
        )


def run_scenario(s: Scenario) -> Trajectory:
    """Simulate the closed loop and record the certified bound chain.

    Per step: locate the concrete mode (and abstraction region for PWA
    abstractions) with hysteresis, advance the stacked state with the mode
    and reference frozen, and split the step at boundary crossings.  The
    per-sample certificate columns are evaluated afterwards in one
    vectorized pass.
    """
    runner = _Runner(s)
    n, m = runner.n, runner.m
    steps = int(math.floor(s.t_end / s.h + 1e-9))
    t = np.arange(steps + 1) * s.h
    pick = np.maximum(np.searchsorted(s.schedule.times, t, side="right") - 1, 0)
    u2bar = s.schedule.values[pick]

    x1 = np.empty((steps + 1, n))
    x2 = np.empty((steps + 1, m))
    mode_i = np.empty(steps + 1, dtype=int)
    mode_j = np.empty(steps + 1, dtype=int)

    i = locate_mode(s.system.partition, s.x1_0)
    j = runner._locate_j(s.x1_0, i, prev_j=runner.pairing[i] if runner.is_pwa else 0)
    z = np.concatenate([s.x1_0, s.x2_0])
    x1[0], x2[0] = z[:n], z[n:]
    mode_i[0], mode_j[0] = i, j

    events: list[CrossingEvent] = []
    for k in range(steps):
        z, i, j = runner.advance(z, float(t[k]), s.h, i, j, u2bar[k], events)
        x1[k + 1], x2[k + 1] = z[:n], z[n:]
        mode_i[k + 1], mode_j[k + 1] = i, j

    return _bookkeep(s, runner, t, x1, x2, u2bar, mode_i, mode_j, tuple(events))


def _bookkeep(s: Scenario, runner: _Runner, t, x1, x2, u2bar, mode_i, mode_j,
              events: tuple[CrossingEvent, ...]) -> Trajectory:
    """Vectorized per-sample certificate columns."""
    joint = s.joint
    cert = s.certificate
    n_samples = t.shape[0]
    n, m = runner.n, runner.m

    u2_sup = s.schedule.sup_norm()
    c_sup = s.disturbance.sup_norm()

    xtilde = np.empty_like(x1)
    u1 = np.empty((n_samples, s.system.p))
    err = np.empty(n_samples)
    V = np.empty(n_samples)
    slope_cols = np.empty((n_samples, 4))  # gamma1, gamma2, gamma3, sqrt_m

    for idx in np.unique(mode_i):
        # lazy certificate check: only modes the trajectory visited
        if not verify_lmi(cert, joint, idx).feasible:
            raise UncertifiedModeError(
                f"certificate infeasible for visited mode {joint.modes[idx].label}"
            )
        rows = np.nonzero(mode_i == idx)[0]
        mode = s.system.modes[idx]
        P = s.relation.P[idx]
        entry = cert.entries[idx]
        jm = joint.modes[idx]
        H = (s.abstraction.modes[s.pairing[idx]].H if runner.is_pwa
             else s.abstraction.H)
        xt = x1[rows] - x2[rows] @ P.T
        xtilde[rows] = xt
        u1[rows] = (u2bar[rows] @ s.interface.R[idx].T
                    + x2[rows] @ (s.interface.Q[idx] + s.interface.R[idx] @ s.interface.L[idx]).T
                    + xt @ s.interface.K[idx].T)
        err[rows] = np.linalg.norm(x1[rows] @ mode.C.T - x2[rows] @ H.T, axis=1)
        omega = np.hstack([xt, x2[rows]])
        quad = np.einsum("ij,jk,ik->i", omega, entry.M, omega)
        if jm.kind == AFFINE:
            quad = quad + entry.m_scalar
        V[rows] = np.sqrt(np.clip(quad, 0.0, None)) / cert.kappa
        slope_cols[rows] = gain_slopes(cert, joint, idx)

    x2_running = np.maximum.accumulate(np.max(np.abs(x2), axis=1))
    b = (slope_cols[:, 0] * u2_sup + slope_cols[:, 1] * c_sup
         + slope_cols[:, 2] * x2_running + slope_cols[:, 3])
    delta = cert.kappa * np.maximum(V, b)

    return Trajectory(
        t=t, x1=x1, x2=x2, xtilde=xtilde, u1=u1, u2bar=u2bar,
        mode_i=mode_i, mode_j=mode_j, err=err, V=V, b=b, delta=delta,
        kappa=cert.kappa, u2_sup=u2_sup, c_sup=c_sup, crossings=events,
    )


def export_trajectory(traj: Trajectory, path) -> None:
    """Write the trajectory as CSV with shortest-exact decimal columns.

    Mode columns are 1-based in the file (human-facing), floats round-trip
    exactly.  The write is atomic (temp file + rename).
    """
    n = traj.x1.shape[1]
    m = traj.x2.shape[1]
    p = traj.u1.shape[1]
    header = (
        ["t"]
        + [f"x1_{a}" for a in range(n)]
        + [f"x2_{a}" for a in range(m)]
        + [f"u1_{a}" for a in range(p)]
        + ["mode_i", "mode_j", "err", "V", "b", "delta"]
    )
    lines = [",".join(header)]
    for k in range(len(traj)):
        row = (
            [repr(float(traj.t[k]))]
            + [repr(float(v)) for v in traj.x1[k]]
            + [repr(float(v)) for v in traj.x2[k]]
            + [repr(float(v)) for v in traj.u1[k]]
            + [str(int(traj.mode_i[k]) + 1), str(int(traj.mode_j[k]) + 1)]
            + [repr(float(traj.err[k])), repr(float(traj.V[k])),
               repr(float(traj.b[k])), repr(float(traj.delta[k]))]
        )
        lines.append(",".join(row))
    payload = "\n".join(lines) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload)
    os.replace(tmp, path)
