"""Uniform triangulations of a rectangle, P1/P2 dof maps and triangle quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np


class Boundary(IntEnum):
    INTERIOR = 0
    TOP = 1
    BOTTOM = 2
    LEFT = 3
    RIGHT = 4


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle (0,0), (1,0), (0,1).

    ``points`` holds barycentric coordinates (L0, L1, L2) with
    L1 = xi and L2 = eta; ``weights`` sum to the reference area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, 1:3]


def dunavant5() -> QuadratureRule:
    """Seven-point rule exact for polynomials of total degree 5."""
    s15 = np.sqrt(15.0)
    b1 = (6.0 + s15) / 21.0
    a1 = 1.0 - 2.0 * b1
    b2 = (6.0 - s15) / 21.0
    a2 = 1.0 - 2.0 * b2
    w0 = 9.0 / 40.0
    w1 = (155.0 + s15) / 1200.0
    w2 = (155.0 - s15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [w0]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        pts += [(a, b, b), (b, a, b), (b, b, a)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


# Local P2 node order: three vertices, then midpoints of edges (0,1), (1,2), (2,0).
P2_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def p1_basis(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, 3) and reference gradients (nq, 3, 2) of the P1 basis."""
    x, y = xi[:, 0], xi[:, 1]
    val = np.stack([1.0 - x - y, x, y], axis=1)
    grad = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(x), 3, 2)
    ).copy()
    return val, grad


def p2_basis(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, 6) and reference gradients (nq, 6, 2) of the P2 basis."""
    x, y = xi[:, 0], xi[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(x)
    val = np.empty((nq, 6))
    grad = np.empty((nq, 6, 2))
    for i in range(3):
        val[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grad[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    for k, (i, j) in enumerate(P2_LOCAL_EDGES):
        val[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grad[:, 3 + k, :] = 4.0 * (lam[:, i, None] * dlam[j] + lam[:, j, None] * dlam[i])
    return val, grad


@dataclass(frozen=True)
class DofMap:
    space: str
    cell_dofs: np.ndarray  # (ntri, 3) or (ntri, 6)
    coords: np.ndarray  # (ndofs, 2)
    tags: np.ndarray  # (ndofs,) Boundary values

    @property
    def size(self) -> int:
        return len(self.coords)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def boundary_dofs(self, *which: Boundary) -> np.ndarray:
        return np.flatnonzero(np.isin(self.tags, [int(w) for w in which]))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured triangulation with every cell square cut along its SW-NE diagonal.

    Vertex ``(i, j)`` has index ``j * (nx + 1) + i``.
    """

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    tri_edges: np.ndarray = field(repr=False)  # (ntri, 3) local edge -> global edge
    # per-mesh element data and solver systems; they live and die with the mesh
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def domain(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(ntri, 2, 2) with columns p1 - p0 and p2 - p0."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians)

    def _tag(self, xy: np.ndarray) -> np.ndarray:
        tags = np.full(len(xy), int(Boundary.INTERIOR), dtype=np.int8)
        # exact coordinate comparison; corners go to top/bottom
        tags[xy[:, 0] == self.x0] = Boundary.LEFT
        tags[xy[:, 0] == self.x1] = Boundary.RIGHT
        tags[xy[:, 1] == self.y0] = Boundary.BOTTOM
        tags[xy[:, 1] == self.y1] = Boundary.TOP
        return tags

    @cached_property
    def p1(self) -> DofMap:
        return DofMap("P1", self.triangles, self.vertices, self._tag(self.vertices))

    @cached_property
    def p2(self) -> DofMap:
        mid = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        # snap boundary midpoints so tags compare exactly
        for col, lo, hi in ((0, self.x0, self.x1), (1, self.y0, self.y1)):
            ends = self.vertices[self.edges][:, :, col]
            mid[(ends == lo).all(axis=1), col] = lo
            mid[(ends == hi).all(axis=1), col] = hi
        coords = np.vstack([self.vertices, mid])
        cell = np.hstack([self.triangles, self.n_vertices + self.tri_edges])
        return DofMap("P2", cell, coords, self._tag(coords))

    def dofmap(self, space: str) -> DofMap:
        if space == "P1":
            return self.p1
        if space == "P2":
            return self.p2
        raise ValueError(f"unknown space {space!r}")

    def map_points(self, xi: np.ndarray) -> np.ndarray:
        """Physical coordinates (ntri, nq, 2) of reference points ``xi``."""
        p0 = self.vertices[self.triangles[:, 0]]
        return p0[:, None, :] + np.einsum("tij,qj->tqi", self.jacobians, xi)

    def p2_grid_index(self) -> np.ndarray:
        """P2 dof numbers arranged on the (2ny+1, 2nx+1) half-spacing lattice."""
        c = self.p2.coords
        i = np.rint((c[:, 0] - self.x0) / (0.5 * self.hx)).astype(int)
        j = np.rint((c[:, 1] - self.y0) / (0.5 * self.hy)).astype(int)
        grid = np.full((2 * self.ny + 1, 2 * self.nx + 1), -1, dtype=np.int64)
        grid[j, i] = np.arange(len(c))
        return grid


def build_uniform(domain, nx: int, ny: int) -> Mesh:
    """Triangulate ``domain = (x0, x1, y0, y1)`` with ``2 * nx * ny`` triangles."""
    x0, x1, y0, y1 = (float(v) for v in domain)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xs[0], xs[-1], ys[0], ys[-1] = x0, x1, y0, y1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    sw = (j * (nx + 1) + i).ravel()
    se, nw = sw + 1, sw + nx + 1
    ne = nw + 1
    lower = np.column_stack([sw, se, ne])
    upper = np.column_stack([sw, ne, nw])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    local = np.array(P2_LOCAL_EDGES)
    pairs = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)
    return Mesh(x0, x1, y0, y1, nx, ny, vertices, triangles, edges, tri_edges)


def integrate(mesh: Mesh, quad: QuadratureRule, integrand) -> float:
    """Integrate ``integrand(x, y)`` (vectorized) over the mesh."""
    pts = mesh.map_points(quad.xi)
    vals = np.asarray(integrand(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, pts.shape[:2])
    det = 2.0 * mesh.signed_areas
    return float(np.sum(det * (vals @ quad.weights)))
