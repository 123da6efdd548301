"""Shared randomized-geometry helpers for containment tests."""

import numpy as np

from pwa_hier.polytope import Polyhedron, vertices_2d


def random_polygon(rng, radius=None) -> Polyhedron:
    """Random bounded polygon from sorted boundary points (inward form)."""
    k = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=k))
    if np.min(np.diff(angles, append=angles[0] + 2 * np.pi)) < 0.2:
        angles = np.linspace(0.0, 2 * np.pi, k, endpoint=False)
    r = radius if radius is not None else rng.uniform(0.5, 2.0)
    pts = np.column_stack([r * np.cos(angles), r * np.sin(angles)])
    center = pts.mean(axis=0)  # strictly inside any convex polygon
    rows, offs = [], []
    for a in range(k):
        p0, p1 = pts[a], pts[(a + 1) % k]
        edge = p1 - p0
        normal = np.array([-edge[1], edge[0]])
        if normal @ (center - p0) < 0:
            normal = -normal
        rows.append(normal)
        offs.append(normal @ p0)
    return Polyhedron(np.array(rows), np.array(offs))


def containment_instance(rng):
    """Random (Z, P, yhat, X) whose answer a 1e4-point grid can resolve.

    Instances whose worst mapped-vertex depth (euclidean-normalized) falls
    inside (-0.15, 1e-6) are redrawn: a grid oracle cannot see violation
    slivers thinner than its spacing, so draws are kept away from the
    decision boundary (the verdict itself stays random).
    """
    while True:
        Z = random_polygon(rng)
        P = rng.normal(scale=0.8, size=(2, 2))
        yhat = rng.normal(scale=0.5, size=2)
        X = random_polygon(rng, radius=rng.uniform(1.0, 3.0))
        norms = np.linalg.norm(X.E, axis=1)
        worst = min(
            float(np.min((X.E @ (P @ v + yhat) - X.f) / norms))
            for v in vertices_2d(Z)
        )
        if worst >= 1e-6 or worst <= -0.15:
            return Z, P, yhat, X


def grid_oracle(Z: Polyhedron, P, yhat, X: Polyhedron, samples: int = 100) -> bool:
    """Dense-grid membership check over Z's bounding box, independent of the
    vertex criterion (samples*samples points, 1e4 by default)."""
    verts = vertices_2d(Z)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    P = np.asarray(P, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    for x in np.linspace(lo[0], hi[0], samples):
        for y in np.linspace(lo[1], hi[1], samples):
            z = np.array([x, y])
            if Z.contains(z, slack=0.0) and not X.contains(P @ z + yhat):
                return False
    return True
