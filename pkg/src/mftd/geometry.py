"""L-bracket domain: geometry, structured grid, material and boundary conditions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LBracketGeometry:
    """L-shaped design domain inside the square [0, L] x [0, L].

    The upper-right (L - w) x (L - w) square is removed. The top edge of the
    vertical leg (y = L) is clamped; the load acts on the top edge of the
    horizontal leg (y = w) over its rightmost ``load_length``, on top of a
    frozen solid strip of depth ``nondesign_depth``.
    """

    outer_size: float = 2.0
    leg_width: float = 0.8
    load_length: float = 0.2
    nondesign_depth: float = 0.04

    def __post_init__(self):
        L, w, l, h = self.outer_size, self.leg_width, self.load_length, self.nondesign_depth
        if not 0 < w <= L:
            raise ValueError(f"leg_width must be in (0, outer_size], got {w}")
        if not 0 < l < L:
            raise ValueError(f"load_length must be in (0, outer_size), got {l}")
        if not 0 < h <= w:
            raise ValueError(f"nondesign_depth must be in (0, leg_width], got {h}")

    @property
    def area(self) -> float:
        return self.outer_size**2 - (self.outer_size - self.leg_width) ** 2

    @property
    def corner(self) -> tuple[float, float]:
        """Re-entrant corner location."""
        return (self.leg_width, self.leg_width)

    def contains(self, x, y):
        """Point membership by coordinates (closed L-shape)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        L, w = self.outer_size, self.leg_width
        inside_square = (x >= 0) & (x <= L) & (y >= 0) & (y <= L)
        return inside_square & ((x <= w) | (y <= w))

    def outline(self) -> np.ndarray:
        """Counter-clockwise outline vertices of the L-shape."""
        L, w = self.outer_size, self.leg_width
        if w >= L:
            return np.array([[0, 0], [L, 0], [L, L], [0, L]], dtype=float)
        return np.array([[0, 0], [L, 0], [L, w], [w, w], [w, L], [0, L]], dtype=float)


@dataclass(frozen=True)
class MaterialModel:
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    p: float = 3.0
    q: float = 0.5

    def __post_init__(self):
        if not 0 < self.Emin < self.E0:
            raise ValueError("require 0 < Emin < E0")
        if not 0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if self.p < 1:
            raise ValueError("SIMP penalization p must be >= 1")
        if not 0 < self.q <= 1:
            raise ValueError("stress relaxation exponent q must lie in (0, 1]")

    def simp_modulus(self, rho_filtered):
        rho_filtered = np.asarray(rho_filtered, dtype=float)
        return self.Emin + rho_filtered**self.p * (self.E0 - self.Emin)

    def simp_modulus_derivative(self, rho_filtered):
        rho_filtered = np.asarray(rho_filtered, dtype=float)
        return self.p * rho_filtered ** (self.p - 1) * (self.E0 - self.Emin)


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Square-cell grid over the bounding square with the active L-shape cells.

    Active cells are numbered row by row (y ascending, x fastest); all
    per-element arrays below are indexed by that active id.
    """

    geometry: LBracketGeometry
    element_size: float
    nx: int
    ny: int
    active: np.ndarray  # (ny, nx) bool
    design: np.ndarray  # (n_active,) bool, False on the frozen strip
    cell_ij: np.ndarray  # (n_active, 2) column/row index of each active cell
    centers: np.ndarray  # (n_active, 2)
    nodes: np.ndarray  # (n_nodes, 2) coordinates of nodes used by active cells
    connectivity: np.ndarray  # (n_active, 4) node ids, counter-clockwise from lower left
    node_ij: np.ndarray = field(repr=False)  # (n_nodes, 2) lattice index of each node

    @property
    def n_elements(self) -> int:
        return len(self.centers)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def n_design(self) -> int:
        return int(self.design.sum())

    @property
    def element_dofs(self) -> np.ndarray:
        c = self.connectivity
        return np.stack([2 * c, 2 * c + 1], axis=-1).reshape(len(c), 8)

    @property
    def cell_area(self) -> float:
        return self.element_size**2

    def to_image(self, values, fill=0.0) -> np.ndarray:
        """Scatter per-element values into an (ny, nx) array (row 0 at y = 0)."""
        img = np.full((self.ny, self.nx), fill, dtype=float)
        img[self.cell_ij[:, 1], self.cell_ij[:, 0]] = values
        return img

    def from_image(self, img) -> np.ndarray:
        return np.asarray(img, dtype=float)[self.cell_ij[:, 1], self.cell_ij[:, 0]]

    def element_at(self, x: float, y: float) -> int:
        """Active id of the cell containing point (x, y); -1 if inactive."""
        i = min(int(x // self.element_size), self.nx - 1)
        j = min(int(y // self.element_size), self.ny - 1)
        hit = np.flatnonzero((self.cell_ij[:, 0] == i) & (self.cell_ij[:, 1] == j))
        return int(hit[0]) if len(hit) else -1


@dataclass(frozen=True)
class BCSet:
    fixed_nodes: np.ndarray
    load_nodes: np.ndarray
    fixed_dofs: np.ndarray
    force: np.ndarray  # length n_dofs

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(len(self.force), dtype=bool)
        mask[self.fixed_dofs] = False
        return np.flatnonzero(mask)


def _cells(length: float, element_size: float, name: str) -> int:
    n = int(round(length / element_size))
    if n < 1 or abs(n * element_size - length) > 1e-9 * max(length, 1.0):
        raise ValueError(
            f"element_size {element_size} does not divide {name} = {length}"
        )
    return n


def build_lbracket(geometry: LBracketGeometry, element_size: float) -> StructuredGrid:
    g = geometry
    n = _cells(g.outer_size, element_size, "outer_size L")
    nw = _cells(g.leg_width, element_size, "leg_width w")
    nl = _cells(g.load_length, element_size, "load_length l")
    nh = _cells(g.nondesign_depth, element_size, "nondesign_depth h")

    jj, ii = np.mgrid[0:n, 0:n]
    active = (ii < nw) | (jj < nw)
    # row-major over (y, x): np.nonzero walks rows first
    rows, cols = np.nonzero(active)
    cell_ij = np.stack([cols, rows], axis=1)
    centers = (cell_ij + 0.5) * element_size

    design = ~((cols >= n - nl) & (rows >= nw - nh) & (rows < nw))

    # nodes of every active cell, renumbered compactly
    lattice = np.full((n + 1, n + 1), -1, dtype=np.int64)
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    for di, dj in corners:
        lattice[rows + dj, cols + di] = 0
    nj, ni = np.nonzero(lattice == 0)
    lattice[nj, ni] = np.arange(len(nj))
    node_ij = np.stack([ni, nj], axis=1)
    nodes = node_ij * float(element_size)
    connectivity = np.stack(
        [lattice[rows + dj, cols + di] for di, dj in corners], axis=1
    )

    return StructuredGrid(
        geometry=g,
        element_size=float(element_size),
        nx=n,
        ny=n,
        active=active,
        design=design,
        cell_ij=cell_ij,
        centers=centers,
        nodes=nodes,
        connectivity=connectivity,
        node_ij=node_ij,
    )


def boundary_conditions(grid: StructuredGrid, force: float = 1.0) -> BCSet:
    """Clamp the top of the vertical leg; spread a downward load over the strip top.

    The load is a uniform traction over the load strip, lumped consistently
    (each boundary edge passes half of its share to each end node).
    """
    g = grid.geometry
    es = grid.element_size
    n = grid.nx
    nw = int(round(g.leg_width / es))
    nl = int(round(g.load_length / es))
    ni, nj = grid.node_ij[:, 0], grid.node_ij[:, 1]

    fixed_nodes = np.flatnonzero((nj == n) & (ni <= nw))
    load_nodes = np.flatnonzero((nj == nw) & (ni >= n - nl))
    if len(load_nodes) < 2:
        raise ValueError("empty load node set")
    load_nodes = load_nodes[np.argsort(ni[load_nodes])]

    F = np.zeros(grid.n_dofs)
    per_edge = force / (len(load_nodes) - 1)
    for a, b in zip(load_nodes[:-1], load_nodes[1:]):
        F[2 * a + 1] -= 0.5 * per_edge
        F[2 * b + 1] -= 0.5 * per_edge

    fixed_dofs = np.sort(np.concatenate([2 * fixed_nodes, 2 * fixed_nodes + 1]))
    return BCSet(fixed_nodes=fixed_nodes, load_nodes=load_nodes, fixed_dofs=fixed_dofs, force=F)
