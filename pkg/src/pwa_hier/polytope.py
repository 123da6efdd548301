"""Polyhedral cells, partitions, and the joint-space constructions over them.

Cells are half-space intersections written as ``E x >= f``.  A cell whose
offset vector is exactly zero is a cone ("conic"); any other cell is
"affine" and is handled in homogeneous coordinates ``[x; 1]`` where needed.
Membership checks carry a small componentwise slack so integrator states
that land numerically on a facet still resolve to a cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyError,
    NoCellError,
    NotTwoDError,
    UnboundedError,
)
from .linalg import as_matrix, as_vector

CONIC = "conic"
AFFINE = "affine"

#: Componentwise slack for cell membership (RK4 states land on facets).
MEMBERSHIP_SLACK = 1e-9

_DEGENERATE_ROW_TOL = 1e-12


@dataclass(frozen=True)
class Polyhedron:
    """Region ``{x : E x >= f}``."""

    E: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        E = as_matrix(self.E, "E")
        f = as_vector(self.f, "f")
        if E.shape[0] < 1:
            raise DimensionMismatchError("polyhedron needs at least one row")
        if E.shape[0] != f.shape[0]:
            raise DimensionMismatchError(
                f"E has {E.shape[0]} rows but f has length {f.shape[0]}"
            )
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "f", f)

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def margin(self, x) -> float:
        """Smallest constraint slack at ``x``; >= 0 means strictly inside."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(np.min(self.E @ x - self.f))

    def contains(self, x, slack: float = MEMBERSHIP_SLACK) -> bool:
        return self.margin(x) >= -slack


def classify_cell(p: Polyhedron) -> str:
    """CONIC iff the offset vector is exactly zero, AFFINE otherwise."""
    return CONIC if np.all(p.f == 0.0) else AFFINE


@dataclass(frozen=True)
class CellBounding:
    """Homogeneous form of a cell: rows satisfy ``Ebar [x;1] >= 0`` on it.

    Conic cells keep ``Ebar = E``; affine cells append the negated offset
    column, ``Ebar = [E, -f]``.
    """

    Ebar: np.ndarray
    kind: str


def cell_bounding(p: Polyhedron) -> CellBounding:
    kind = classify_cell(p)
    if kind == CONIC:
        return CellBounding(p.E.copy(), CONIC)
    return CellBounding(np.hstack([p.E, -p.f[:, None]]), AFFINE)


@dataclass(frozen=True)
class ContinuityMatrix:
    """Per-cell matrix agreeing across shared facets in homogeneous form."""

    Jbar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Jbar", as_matrix(self.Jbar, "Jbar"))


def identity_continuity(state_dim: int, kind: str) -> ContinuityMatrix:
    """Default continuity matrix: identity, extended by [0;...;1] for affine
    cells.  Trivially agrees across every facet."""
    if kind == CONIC:
        return ContinuityMatrix(np.eye(state_dim))
    return ContinuityMatrix(np.eye(state_dim + 1))


@dataclass(frozen=True)
class Partition:
    """Ordered list of cells over one state space."""

    cells: tuple[Polyhedron, ...]

    def __post_init__(self):
        cells = tuple(self.cells)
        if not cells:
            raise DimensionMismatchError("partition needs at least one cell")
        dim = cells[0].dim
        for c in cells:
            if c.dim != dim:
                raise DimensionMismatchError("partition cells differ in dimension")
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return self.cells[0].dim

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(classify_cell(c) for c in self.cells)

    def __len__(self) -> int:
        return len(self.cells)


def locate_mode(part: Partition, x, previous: Optional[int] = None) -> int:
    """Index of a cell containing ``x`` within slack.

    Ties break by keeping ``previous`` whenever it still qualifies
    (hysteresis, so boundary chatter does not flip modes), else by lowest
    index.  Raises NoCellError when no cell qualifies.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != part.dim:
        raise DimensionMismatchError(
            f"state has dimension {x.shape[0]}, partition expects {part.dim}"
        )
    if previous is not None and 0 <= previous < len(part.cells):
        if part.cells[previous].contains(x):
            return previous
    for idx, cell in enumerate(part.cells):
        if cell.contains(x):
            return idx
    raise NoCellError(f"state {x.tolist()} lies in no partition cell")


def joint_partition_linear(part: Partition, P_per_mode: Sequence[np.ndarray]) -> Partition:
    """Lift a concrete partition to the joint (tracking-error, abstraction)
    space: cell i becomes ``{(xt, x2) : [E_i, E_i P_i] (xt, x2) >= f_i}``."""
    if len(P_per_mode) != len(part.cells):
        raise DimensionMismatchError("need one P matrix per cell")
    cells = []
    for cell, P in zip(part.cells, P_per_mode):
        P = as_matrix(P, "P")
        if P.shape[0] != cell.dim:
            raise DimensionMismatchError(
                f"P has {P.shape[0]} rows, cell dimension is {cell.dim}"
            )
        cells.append(Polyhedron(np.hstack([cell.E, cell.E @ P]), cell.f))
    return Partition(tuple(cells))


def joint_partition_pwa(
    concrete: Partition,
    regions: Sequence[Polyhedron],
    P_per_mode: Sequence[np.ndarray],
    pairs: Optional[Sequence[tuple[int, int]]] = None,
) -> Partition:
    """Joint cells for (concrete mode i, abstraction region j) pairs.

    ``regions`` describe the abstraction's cells in the concrete state space
    (``E_c x1 >= f_c``).  Each pair stacks the concrete cell's rows over the
    region's rows, both lifted by the same ``P_i``.  ``pairs`` defaults to
    the full product in ``itertools.product`` order.
    """
    if len(P_per_mode) != len(concrete.cells):
        raise DimensionMismatchError("need one P matrix per concrete cell")
    for reg in regions:
        if reg.dim != concrete.dim:
            raise DimensionMismatchError(
                "abstraction regions must live in the concrete state space"
            )
    if pairs is None:
        pairs = list(itertools.product(range(len(concrete.cells)), range(len(regions))))
    cells = []
    for i, j in pairs:
        cell, reg, P = concrete.cells[i], regions[j], as_matrix(P_per_mode[i], "P")
        E = np.vstack([
            np.hstack([cell.E, cell.E @ P]),
            np.hstack([reg.E, reg.E @ P]),
        ])
        f = np.concatenate([cell.f, reg.f])
        cells.append(Polyhedron(E, f))
    return Partition(tuple(cells))


def abstraction_cell_estimate(Ec, fc, P, xtilde) -> Polyhedron:
    """Abstraction-space cell implied by a concrete-space region at the
    current tracking error: ``{x2 : (Ec P) x2 >= fc - Ec xt}``."""
    Ec = as_matrix(Ec, "Ec")
    fc = as_vector(fc, "fc")
    P = as_matrix(P, "P")
    xtilde = as_vector(xtilde, "xtilde")
    if Ec.shape[1] != P.shape[0] or Ec.shape[1] != xtilde.shape[0]:
        raise DimensionMismatchError("Ec columns must match P rows and xtilde length")
    if Ec.shape[0] != fc.shape[0]:
        raise DimensionMismatchError("Ec rows must match fc length")
    return Polyhedron(Ec @ P, fc - Ec @ xtilde)


def _rot90(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


def vertices_2d(p: Polyhedron) -> np.ndarray:
    """Counter-clockwise vertices of a bounded 2-D polyhedron.

    Vertices come from pairwise facet intersections filtered by feasibility.
    Boundedness is checked first by looking for a recession direction among
    the rotated constraint normals (any nontrivial recession cone in the
    plane has an extreme ray orthogonal to some constraint normal).
    """
    if p.dim != 2:
        raise NotTwoDError(f"polyhedron is {p.dim}-D")
    row_norms = np.max(np.abs(p.E), axis=1)
    live = row_norms > _DEGENERATE_ROW_TOL
    # zero rows: 0 >= f is vacuous for f <= 0, infeasible otherwise
    if np.any(p.f[~live] > MEMBERSHIP_SLACK):
        raise EmptyError("zero constraint row with positive offset")
    E, f = p.E[live], p.f[live]
    if E.shape[0] == 0:
        raise UnboundedError("no effective constraints: region is the plane")

    scale = float(np.max(np.abs(E)))
    for row in E:
        for d in (_rot90(row), -_rot90(row)):
            if np.all(E @ d >= -1e-12 * scale * np.linalg.norm(d)):
                raise UnboundedError(
                    f"recession direction {d.tolist()} detected"
                )

    f_scale = max(1.0, float(np.max(np.abs(f))) if f.size else 1.0)
    verts: list[np.ndarray] = []
    for i, j in itertools.combinations(range(E.shape[0]), 2):
        M = np.vstack([E[i], E[j]])
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if abs(det) <= 1e-12 * scale * scale:
            continue
        v = np.linalg.solve(M, np.array([f[i], f[j]]))
        tol = MEMBERSHIP_SLACK * max(f_scale, float(np.max(np.abs(v))), 1.0)
        if np.min(E @ v - f) >= -tol:
            verts.append(v)
    if not verts:
        raise EmptyError("no feasible vertex: polyhedron is empty")

    # deduplicate
    unique: list[np.ndarray] = []
    span = max(1.0, max(float(np.max(np.abs(v))) for v in verts))
    for v in verts:
        if all(np.max(np.abs(v - u)) > 1e-9 * span for u in unique):
            unique.append(v)
    if len(unique) <= 2:
        return np.array(unique)
    centroid = np.mean(unique, axis=0)
    angles = [np.arctan2(v[1] - centroid[1], v[0] - centroid[0]) for v in unique]
    order = np.argsort(angles)
    return np.array([unique[k] for k in order])


def contains_mapped(Z: Polyhedron, P, yhat, X: Polyhedron) -> bool:
    """Whether the affine image ``P Z + yhat`` lies inside ``X``.

    For a bounded polytope the image is the convex hull of the mapped
    vertices, so checking every vertex of ``Z`` against ``X`` (within the
    membership slack) is equivalent to the nonnegative-multiplier condition
    for set inclusion.
    """
    P = as_matrix(P, "P")
    yhat = as_vector(yhat, "yhat")
    if P.shape[1] != Z.dim:
        raise DimensionMismatchError("P columns must match Z dimension")
    if P.shape[0] != X.dim or yhat.shape[0] != X.dim:
        raise DimensionMismatchError("P rows and yhat must match X dimension")
    for v in vertices_2d(Z):
        if not X.contains(P @ v + yhat):
            return False
    return True
