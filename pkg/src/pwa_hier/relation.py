"""Abstraction-relation solving, interface synthesis, and joint assembly.

A relation between a concrete mode ``(A, B, C)`` and an abstraction
``(F, H)`` is a pair ``(P, Q)`` with ``H = C P`` and ``P F = A P + B Q``.
Both equations are vectorized into one stacked linear system and solved for
the minimum-norm least-squares pair; the residual certifies the relation.
The interface feeds the abstraction state, transformed input, and tracking
error back into the concrete input, and the closed loop is assembled as a
block joint system over ``omega = (xtilde, x2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    NoFeasiblePairingError,
    SingularBBtError,
    UncertifiedRelationError,
)
from .linalg import (
    as_matrix,
    as_vector,
    kron_solve_least_squares,
    pinv_psd,
    spectral_norm,
    sym_eigen,
)
from .polytope import (
    CellBounding,
    Polyhedron,
    cell_bounding,
    classify_cell,
    joint_partition_linear,
    joint_partition_pwa,
)
from .systems import (
    AbstractionMode,
    LinearAbstraction,
    PwaAbstraction,
    PwaMode,
    PwaSystem,
    assert_hurwitz,
)

#: Residuals are tied for pairing purposes when within this scaled quantum.
_PAIRING_TIE_RTOL = 1e-12

#: Smallest singular value an injective state map must exceed.
INJECTIVITY_TOL = 1e-8


def relation_tolerance(A, H) -> float:
    """Certification threshold for a relation residual."""
    return 1e-8 * (1.0 + spectral_norm(H) + spectral_norm(A))


def _injective(P: np.ndarray) -> bool:
    if P.shape[0] < P.shape[1]:
        return False
    return float(np.linalg.svd(P, compute_uv=False)[-1]) >= INJECTIVITY_TOL


def _vec(M: np.ndarray) -> np.ndarray:
    return M.reshape(-1, order="F")


def solve_relation(A, B, C, F, H) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-norm least-squares ``(P, Q, residual)`` for the relation
    equations ``H = C P`` and ``P F = A P + B Q``.

    Both matrix equations are stacked as one linear system in
    ``(vec P, vec Q)`` (column-major vec); the backend returns the
    minimum-norm solution on rank-deficient systems, so the result is
    deterministic even when the relation is underdetermined.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    F = as_matrix(F, "F")
    H = as_matrix(H, "H")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionMismatchError(f"A must be square, got {A.shape}")
    p = B.shape[1]
    k = C.shape[0]
    m = F.shape[0]
    if B.shape[0] != n or C.shape[1] != n:
        raise DimensionMismatchError("B/C do not match the state dimension")
    if F.shape[1] != m or H.shape != (k, m):
        raise DimensionMismatchError("F/H do not match the abstraction dimension")

    Im = np.eye(m)
    In = np.eye(n)
    # rows: vec(C P) = vec(H) ; vec(P F - A P - B Q) = 0
    output_rows = np.hstack([np.kron(Im, C), np.zeros((k * m, p * m))])
    dynamics_rows = np.hstack([
        np.kron(F.T, In) - np.kron(Im, A),
        -np.kron(Im, B),
    ])
    coeff = np.vstack([output_rows, dynamics_rows])
    rhs = np.concatenate([_vec(H), np.zeros(n * m)])
    sol, residual = kron_solve_least_squares(coeff, rhs)
    P = sol[: n * m].reshape((n, m), order="F")
    Q = sol[n * m:].reshape((p, m), order="F")
    return P, Q, residual


@dataclass(frozen=True)
class RelationMaps:
    """Per-mode relation solution; ``pairing`` is set for PWA abstractions."""

    P: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    residuals: tuple[float, ...]
    pairing: Optional[tuple[int, ...]] = None


def solve_system_relation(system: PwaSystem, abstraction: LinearAbstraction) -> RelationMaps:
    """Relation maps of every concrete mode against one linear abstraction."""
    Ps, Qs, residuals = [], [], []
    for mode in system.modes:
        P, Q, r = solve_relation(mode.A, mode.B, mode.C, abstraction.F, abstraction.H)
        Ps.append(P)
        Qs.append(Q)
        residuals.append(r)
    return RelationMaps(tuple(Ps), tuple(Qs), tuple(residuals))


def solve_relation_pairing(
    concrete_modes: Sequence[PwaMode],
    abstraction_modes: Sequence[AbstractionMode],
) -> tuple[tuple[int, ...], RelationMaps]:
    """Best abstraction mode per concrete mode, with its relation maps.

    Every ``(F_j, H_j)`` is tried; candidates above the certification
    tolerance or with a non-injective state map are discarded.  Residuals
    within a small scaled quantum count as tied, and ties break by the
    smaller solution norm ``||(vec P, vec Q)||_2`` (several abstraction
    modes often solve a given concrete mode exactly; the leanest certified
    relation wins), then by the lower index.
    """
    if not abstraction_modes:
        raise DimensionMismatchError("need at least one abstraction mode")
    pairing, Ps, Qs, residuals = [], [], [], []
    for i, mode in enumerate(concrete_modes):
        candidates = []
        scale = 1.0 + spectral_norm(mode.A)
        for j, am in enumerate(abstraction_modes):
            P, Q, r = solve_relation(mode.A, mode.B, mode.C, am.F, am.H)
            tol = relation_tolerance(mode.A, am.H)
            scale = max(scale, 1.0 + spectral_norm(am.H) + spectral_norm(mode.A))
            if r <= tol and _injective(P):
                norm = float(np.sqrt(np.sum(P * P) + np.sum(Q * Q)))
                candidates.append((j, P, Q, r, norm))
        if not candidates:
            raise NoFeasiblePairingError(
                f"concrete mode {i} admits no certified relation"
            )
        r_min = min(c[3] for c in candidates)
        tied = [c for c in candidates if c[3] <= r_min + _PAIRING_TIE_RTOL * scale]
        j, P, Q, r, _ = min(tied, key=lambda c: (c[4], c[0]))
        pairing.append(j)
        Ps.append(P)
        Qs.append(Q)
        residuals.append(r)
    maps = RelationMaps(tuple(Ps), tuple(Qs), tuple(residuals), tuple(pairing))
    return tuple(pairing), maps


def default_R(B, P, G) -> np.ndarray:
    """Default interface feedthrough ``B^T (B B^T)^+ P G``.

    The pseudo-inverse makes this the least-squares feedthrough (it projects
    ``P G`` onto the range of ``B``), and reduces to the plain inverse when
    ``B B^T`` is nonsingular.  Raises SingularBBtError only when ``B`` is
    numerically zero.
    """
    B = as_matrix(B, "B")
    P = as_matrix(P, "P")
    G = as_matrix(G, "G")
    if P.shape[0] != B.shape[0] or P.shape[1] != G.shape[0]:
        raise DimensionMismatchError("B/P/G shapes are inconsistent")
    BBt = B @ B.T
    eig = sym_eigen(BBt)
    if float(eig.eigenvalues[-1]) <= 1e-10:
        raise SingularBBtError("B is numerically zero; no feedthrough exists")
    return B.T @ pinv_psd(BBt) @ P @ G


def interface_linear(xtilde, x2, u2bar, R, Q, L, K) -> np.ndarray:
    """Concrete input ``u1 = R u2bar + (Q + R L) x2 + K xtilde``."""
    xtilde = as_vector(xtilde, "xtilde")
    x2 = as_vector(x2, "x2")
    u2bar = as_vector(u2bar, "u2bar")
    R = as_matrix(R, "R")
    Q = as_matrix(Q, "Q")
    L = as_matrix(L, "L")
    K = as_matrix(K, "K")
    if (K.shape[1] != xtilde.shape[0] or Q.shape[1] != x2.shape[0]
            or R.shape[1] != u2bar.shape[0] or L.shape[0] != u2bar.shape[0]
            or L.shape[1] != x2.shape[0]):
        raise DimensionMismatchError("interface operand shapes are inconsistent")
    return R @ u2bar + (Q + R @ L) @ x2 + K @ xtilde


def interface_pwa(xtilde, x2, u2bar, R_ij, Q_i, L_j, K_i) -> np.ndarray:
    """Pair-indexed variant of the interface: same affine law with the
    feedthrough and transformation taken from the active pair."""
    return interface_linear(xtilde, x2, u2bar, R_ij, Q_i, L_j, K_i)


@dataclass(frozen=True)
class Interface:
    """Per-concrete-mode interface gains, resolved against the pairing.

    ``K[i]`` stabilizes ``A_i + B_i K[i]``; ``R[i]`` is the feedthrough for
    mode i (paired abstraction mode for PWA abstractions); ``Q[i]`` and
    ``L[i]`` are the relation map and input transformation it closes over.
    """

    K: tuple[np.ndarray, ...]
    R: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]

    def u1(self, idx: int, xtilde, x2, u2bar) -> np.ndarray:
        return interface_linear(
            xtilde, x2, u2bar, self.R[idx], self.Q[idx], self.L[idx], self.K[idx]
        )


def build_interface(
    system: PwaSystem,
    abstraction: Union[LinearAbstraction, PwaAbstraction],
    relation: RelationMaps,
    K: Sequence[np.ndarray],
    R: Optional[Sequence[np.ndarray]] = None,
    pairing: Optional[Sequence[int]] = None,
) -> Interface:
    """Assemble and validate the interface for every concrete mode.

    ``R`` entries default to the pseudo-inverse feedthrough.  Every
    ``A_i + B_i K_i`` must be Hurwitz.
    """
    if len(K) != system.n_modes:
        raise DimensionMismatchError("need one K gain per concrete mode")
    if R is not None and len(R) != system.n_modes:
        raise DimensionMismatchError("need one R per concrete mode when overriding")
    if isinstance(abstraction, PwaAbstraction):
        if pairing is None:
            pairing = relation.pairing
        if pairing is None or len(pairing) != system.n_modes:
            raise DimensionMismatchError("PWA abstraction requires a pairing")
    Ks, Rs, Qs, Ls = [], [], [], []
    for i, mode in enumerate(system.modes):
        Ki = as_matrix(K[i], f"K[{i}]")
        if Ki.shape != (mode.p, mode.n):
            raise DimensionMismatchError(
                f"K[{i}] has shape {Ki.shape}, expected {(mode.p, mode.n)}"
            )
        assert_hurwitz(mode.A + mode.B @ Ki, f"closed loop of mode {i}")
        if isinstance(abstraction, PwaAbstraction):
            am = abstraction.modes[pairing[i]]
            G, L = am.G, am.L
        else:
            G, L = abstraction.G, abstraction.L
        Ri = as_matrix(R[i], f"R[{i}]") if R is not None else default_R(
            mode.B, relation.P[i], G
        )
        Ks.append(Ki)
        Rs.append(Ri)
        Qs.append(relation.Q[i])
        Ls.append(L)
    return Interface(tuple(Ks), tuple(Rs), tuple(Qs), tuple(Ls))


@dataclass(frozen=True)
class JointMode:
    """Closed-loop joint dynamics of one mode (or pair) over
    ``omega = (xtilde, x2)`` plus the homogeneous extension over
    ``omegabar = (omega, 1)``.

    The drift splits as ``omega' = Aprime omega + B1prime x2 + B2prime u2bar
    + (c(t), 0)``; the abstraction state appears both inside ``omega`` and
    as the separately-bounded input ``x2``.
    """

    label: tuple
    kind: str
    Aprime: np.ndarray
    B1prime: np.ndarray
    B2prime: np.ndarray
    Cprime: np.ndarray
    cell: Polyhedron
    bounding: CellBounding
    Abar: np.ndarray
    B1bar: np.ndarray
    B2bar: np.ndarray
    Cbar: np.ndarray


@dataclass(frozen=True)
class JointSystem:
    """Per-mode (or per-pair) closed-loop joint blocks and joint partition."""

    modes: tuple[JointMode, ...]
    n: int
    m: int

    def __len__(self) -> int:
        return len(self.modes)


def _joint_mode(label, mode, K, R, P, G, L, closed_abs, cell) -> JointMode:
    n, m = mode.n, P.shape[1]
    closed = mode.A + mode.B @ K
    Aprime = np.block([
        [closed, np.zeros((n, m))],
        [np.zeros((m, n)), closed_abs],
    ])
    feed = mode.B @ R - P @ G
    B1prime = np.vstack([feed @ L, np.zeros((m, m))])
    B2prime = np.vstack([feed, G])
    Cprime = np.hstack([mode.C, np.zeros((mode.k, m))])
    d = n + m
    Abar = np.zeros((d + 1, d + 1))
    Abar[:d, :d] = Aprime
    B1bar = np.vstack([B1prime, np.zeros((1, m))])
    B2bar = np.vstack([B2prime, np.zeros((1, B2prime.shape[1]))])
    Cbar = np.hstack([Cprime, np.zeros((mode.k, 1))])
    return JointMode(
        label=label,
        kind=classify_cell(cell),
        Aprime=Aprime,
        B1prime=B1prime,
        B2prime=B2prime,
        Cprime=Cprime,
        cell=cell,
        bounding=cell_bounding(cell),
        Abar=Abar,
        B1bar=B1bar,
        B2bar=B2bar,
        Cbar=Cbar,
    )


def _check_certified(residual: float, tol: float, P: np.ndarray, what: str) -> None:
    if residual > tol:
        raise UncertifiedRelationError(
            f"{what}: relation residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )
    if not _injective(P):
        raise UncertifiedRelationError(
            f"{what}: state map is not injective (singular value below "
            f"{INJECTIVITY_TOL:.0e})"
        )


def assemble_joint_linear(
    system: PwaSystem,
    abstraction: LinearAbstraction,
    relation: RelationMaps,
    interface: Interface,
) -> JointSystem:
    """Closed-loop joint system for a linear abstraction, one entry per
    concrete mode, over the lifted joint partition."""
    closed_abs = abstraction.transformed()
    joint_cells = joint_partition_linear(system.partition, relation.P)
    modes = []
    for i, mode in enumerate(system.modes):
        _check_certified(
            relation.residuals[i],
            relation_tolerance(mode.A, abstraction.H),
            relation.P[i],
            f"mode {i}",
        )
        modes.append(_joint_mode(
            (i,), mode, interface.K[i], interface.R[i], relation.P[i],
            abstraction.G, interface.L[i], closed_abs, joint_cells.cells[i],
        ))
    return JointSystem(tuple(modes), n=system.n, m=abstraction.m)


def assemble_joint_pwa(
    system: PwaSystem,
    abstraction: PwaAbstraction,
    pairing: Sequence[int],
    relation: RelationMaps,
    interface: Interface,
) -> JointSystem:
    """Closed-loop joint system for a PWA abstraction, one entry per
    certified pair ``(i, pairing[i])``; joint cells stack the concrete cell
    rows over the paired region rows."""
    if len(pairing) != system.n_modes:
        raise DimensionMismatchError("pairing must cover every concrete mode")
    pairs = [(i, pairing[i]) for i in range(system.n_modes)]
    joint_cells = joint_partition_pwa(
        system.partition, list(abstraction.concrete_cells), relation.P, pairs=pairs
    )
    modes = []
    for idx, (i, j) in enumerate(pairs):
        mode = system.modes[i]
        am = abstraction.modes[j]
        _check_certified(
            relation.residuals[i],
            relation_tolerance(mode.A, am.H),
            relation.P[i],
            f"pair ({i}, {j})",
        )
        modes.append(_joint_mode(
            (i, j), mode, interface.K[i], interface.R[i], relation.P[i],
            am.G, am.L, am.transformed(), joint_cells.cells[idx],
        ))
    return JointSystem(tuple(modes), n=system.n, m=abstraction.m)
