"""High-fidelity evaluation of a density field on a body-fitted triangle mesh.

binarize -> keep the load-carrying component -> trace cell-face contours ->
Laplacian smoothing -> constrained Delaunay mesh -> solid-only plane-stress
analysis.  Objectives are the true maximum von Mises stress and the solid
area fraction; nothing here uses SIMP, qp relaxation or the p-norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import shapely
import triangle as tr
from scipy import ndimage

from .fem import SolverError, solve_triangles, von_mises
from .geometry import StructuredGrid

log = logging.getLogger(__name__)

TAG_FREE, TAG_OUTLINE, TAG_FIXED, TAG_LOAD = 0, 1, 2, 3
# relative residual accepted from the mesh solve; thin members on fine
# meshes push the LU residual just above 1e-10
SOLVE_TOL = 1e-8
_MARKER_OFFSET = 10

# outgoing face edges of a solid cell, counter-clockwise, with the neighbour
# across each face: (start corner, end corner, neighbour offset)
_FACES = (
    ((0, 0), (1, 0), (0, -1)),  # bottom, heading east
    ((1, 0), (1, 1), (1, 0)),  # right, heading north
    ((1, 1), (0, 1), (0, 1)),  # top, heading west
    ((0, 1), (0, 0), (-1, 0)),  # left, heading south
)


class InvalidCandidate(Exception):
    """Raised inside the pipeline; evaluate_hifi turns it into an invalid result."""


@dataclass(frozen=True)
class HiFiConfig:
    threshold: float = 0.5
    smoothing_iterations: int = 5
    damping: float = 0.5
    target_edge_length: float | None = None  # None: half the structured element size
    min_angle: float = 25.0
    E0: float = 1.0
    nu: float = 0.3
    force: float = 1.0

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.smoothing_iterations < 0:
            raise ValueError("smoothing_iterations must be >= 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    def edge_length(self, grid: StructuredGrid) -> float:
        return self.target_edge_length or grid.element_size / 2


@dataclass(eq=False)
class BinaryShape:
    grid: StructuredGrid
    solid: np.ndarray  # (n_active,) bool

    def image(self) -> np.ndarray:
        return self.grid.to_image(self.solid, fill=0.0).astype(bool)

    @property
    def volume_fraction(self) -> float:
        return float(self.solid.mean())


@dataclass
class Contour:
    """Closed polyline, material on the left; ``tags[k]`` labels segment k -> k+1."""

    points: np.ndarray
    tags: np.ndarray
    pinned: np.ndarray

    @property
    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def length(self) -> float:
        d = np.roll(self.points, -1, axis=0) - self.points
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def segments(self) -> np.ndarray:
        return np.stack([self.points, np.roll(self.points, -1, axis=0)], axis=1)


@dataclass
class BoundaryContourSet:
    loops: list
    element_size: float

    @property
    def area(self) -> float:
        return sum(c.signed_area for c in self.loops)

    def all_segments(self) -> np.ndarray:
        if not self.loops:
            return np.zeros((0, 2, 2))
        return np.concatenate([c.segments() for c in self.loops])


@dataclass(eq=False)
class BodyFittedMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    segments: np.ndarray  # boundary segments (node ids)
    segment_tags: np.ndarray
    target_edge_length: float

    @property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def angles(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        out = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
        return np.stack(out, axis=1)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


@dataclass
class HighFiResult:
    sigma_max: float
    volume_fraction: float
    valid: bool
    reason: str = ""
    location: tuple | None = None
    n_triangles: int = 0
    min_angle: float = float("nan")
    mesh: BodyFittedMesh | None = field(default=None, repr=False, compare=False)
    stress_vm: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def objectives(self) -> tuple:
        if not self.valid:
            return (float("inf"), float("inf"))
        return (self.sigma_max, self.volume_fraction)

    @classmethod
    def invalid(cls, reason: str):
        return cls(float("inf"), float("inf"), False, reason)


# ----------------------------------------------------------------------------


def binarize(rho, grid: StructuredGrid, threshold: float = 0.5) -> BinaryShape:
    solid = np.asarray(rho, dtype=float) >= threshold
    solid = solid | ~grid.design
    return BinaryShape(grid, solid)


def _support_and_load_cells(grid: StructuredGrid):
    g = grid.geometry
    es = grid.element_size
    nw = int(round(g.leg_width / es))
    i, j = grid.cell_ij[:, 0], grid.cell_ij[:, 1]
    support = (j == grid.ny - 1) & (i < nw)
    load = ~grid.design
    return support, load


def _components(shape: BinaryShape):
    four = ndimage.generate_binary_structure(2, 1)
    labels, _ = ndimage.label(shape.image(), structure=four)
    return shape.grid.from_image(labels).astype(int)


def check_connectivity(shape: BinaryShape) -> bool:
    """True iff a 4-connected solid path joins the load strip to the clamped edge."""
    support, load = _support_and_load_cells(shape.grid)
    lab = _components(shape)
    s = set(lab[support & shape.solid]) - {0}
    l_ = set(lab[load & shape.solid]) - {0}
    return bool(s & l_)


def load_path_component(shape: BinaryShape) -> BinaryShape:
    """Drop every solid island not 4-connected to the load strip."""
    _, load = _support_and_load_cells(shape.grid)
    lab = _components(shape)
    keep = set(lab[load & shape.solid]) - {0}
    return BinaryShape(shape.grid, np.isin(lab, list(keep)) & shape.solid)


def _lattice_on_outline(i, j, n, nw):
    i = np.asarray(i)
    j = np.asarray(j)
    return (
        (j == 0)
        | (i == 0)
        | ((i == n) & (j <= nw))
        | ((j == nw) & (i >= nw))
        | ((i == nw) & (j >= nw))
        | ((j == n) & (i <= nw))
    )


def extract_contours(shape: BinaryShape) -> BoundaryContourSet:
    """Trace the solid/void cell faces into closed loops (material on the left).

    Where two solid cells touch only at a corner the loops are kept apart, so
    void regions meeting at that corner stay connected.
    """
    grid = shape.grid
    if not shape.solid.any():
        raise InvalidCandidate("empty")
    g = grid.geometry
    es = grid.element_size
    n = grid.nx
    nw = int(round(g.leg_width / es))
    nl = int(round(g.load_length / es))
    img = shape.image()
    active = grid.active
    padded = np.zeros((grid.ny + 2, grid.nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = img
    pad_active = np.zeros_like(padded)
    pad_active[1:-1, 1:-1] = active

    js, is_ = np.nonzero(img)
    starts, ends, tags = [], [], []
    for (s, e, (di, dj)) in _FACES:
        nb_solid = padded[js + 1 + dj, is_ + 1 + di]
        nb_active = pad_active[js + 1 + dj, is_ + 1 + di]
        sel = ~nb_solid
        ci, cj = is_[sel], js[sel]
        tag = np.where(nb_active[sel], TAG_FREE, TAG_OUTLINE)
        if (di, dj) == (0, 1):
            tag = np.where((cj == n - 1) & (ci < nw), TAG_FIXED, tag)
            tag = np.where((cj == nw - 1) & (ci >= n - nl), TAG_LOAD, tag)
        starts.append(np.stack([ci + s[0], cj + s[1]], axis=1))
        ends.append(np.stack([ci + e[0], cj + e[1]], axis=1))
        tags.append(tag)
    starts = np.concatenate(starts)
    ends = np.concatenate(ends)
    tags = np.concatenate(tags)
    dirs = ends - starts

    out_edges = {}
    for k, key in enumerate(map(tuple, starts)):
        out_edges.setdefault(key, []).append(k)

    succ = np.empty(len(starts), dtype=np.int64)
    for k in range(len(starts)):
        cands = out_edges[tuple(ends[k])]
        if len(cands) == 1:
            succ[k] = cands[0]
            continue
        dx, dy = dirs[k]
        for pref in ((-dy, dx), (dx, dy), (dy, -dx)):  # left, straight, right
            hit = [c for c in cands if tuple(dirs[c]) == pref]
            if hit:
                succ[k] = hit[0]
                break

    seen = np.zeros(len(starts), dtype=bool)
    loops = []
    # deterministic start: lowest (j, i) edge first
    order = np.lexsort((starts[:, 0], starts[:, 1]))
    for k0 in order:
        if seen[k0]:
            continue
        chain = []
        k = k0
        while not seen[k]:
            seen[k] = True
            chain.append(k)
            k = succ[k]
        lat = starts[chain]
        pts = lat * es
        pinned = _lattice_on_outline(lat[:, 0], lat[:, 1], n, nw)
        loops.append(Contour(points=pts.astype(float), tags=tags[chain].copy(), pinned=pinned))
    return BoundaryContourSet(loops=loops, element_size=es)


def _segments_cross(segs: np.ndarray) -> bool:
    """True if any two segments intersect other than at a shared endpoint."""
    if len(segs) < 2:
        return False
    lines = shapely.linestrings(segs)
    tree = shapely.STRtree(lines)
    a, b = tree.query(lines, predicate="intersects")
    keep = a < b
    a, b = a[keep], b[keep]
    if len(a) == 0:
        return False
    sa, sb = segs[a], segs[b]
    share = np.zeros(len(a), dtype=bool)
    for p in range(2):
        for q in range(2):
            share |= np.all(sa[:, p] == sb[:, q], axis=1)
    if np.any(~share):
        return True
    inter = shapely.intersection(lines[a[share]], lines[b[share]])
    return bool(np.any(shapely.get_type_id(inter) != 0))  # 0 = Point


def smooth_contours(contours: BoundaryContourSet, iterations: int = 5, damping: float = 0.5,
                    max_halvings: int = 6) -> BoundaryContourSet:
    """Damped Laplacian smoothing of free vertices; outline vertices stay put.

    If the result self-intersects, damping is halved and smoothing redone.
    """
    if iterations == 0:
        return contours
    d = damping
    for _ in range(max_halvings + 1):
        loops = []
        for c in contours.loops:
            P = c.points.copy()
            free = ~c.pinned
            for _ in range(iterations):
                avg = 0.5 * (np.roll(P, 1, axis=0) + np.roll(P, -1, axis=0))
                P[free] += d * (avg[free] - P[free])
            loops.append(Contour(points=P, tags=c.tags.copy(), pinned=c.pinned.copy()))
        out = BoundaryContourSet(loops=loops, element_size=contours.element_size)
        if not _segments_cross(out.all_segments()):
            return out
        log.debug("smoothing produced an intersection; damping %.4f -> %.4f", d, d / 2)
        d /= 2
    raise InvalidCandidate("self-intersection")


def drop_degenerate(contours: BoundaryContourSet, min_area: float = None) -> BoundaryContourSet:
    min_area = contours.element_size**2 if min_area is None else min_area
    kept = []
    for c in contours.loops:
        if abs(c.signed_area) < min_area:
            log.debug("dropping degenerate contour of area %.3g", c.signed_area)
            continue
        kept.append(c)
    return BoundaryContourSet(loops=kept, element_size=contours.element_size)


def _inside(points, segs, chunk: int = 2048) -> np.ndarray:
    """Even-odd point-in-region test against a set of closed loops."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x1, y1 = segs[:, 0, 0][None], segs[:, 0, 1][None]
    x2, y2 = segs[:, 1, 0][None], segs[:, 1, 1][None]
    out = np.zeros(len(points), dtype=bool)
    for k in range(0, len(points), chunk):
        px, py = points[k:k + chunk, 0][:, None], points[k:k + chunk, 1][:, None]
        straddle = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        out[k:k + chunk] = (np.sum(straddle & (px < xint), axis=1) % 2) == 1
    return out


def triangulate(contours: BoundaryContourSet, target_edge_length: float,
                min_angle: float = 25.0) -> BodyFittedMesh:
    """Constrained Delaunay mesh of the region enclosed by the contours.

    Void reachable from the outside is carved by the mesher itself. Enclosed
    void pockets are meshed too and their triangles dropped afterwards by an
    even-odd centroid test; Triangle's own hole seeding crashed on some inputs.
    """
    if not contours.loops:
        raise InvalidCandidate("empty")
    pts = np.concatenate([c.points for c in contours.loops])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    segs, marks = [], []
    off = 0
    for c in contours.loops:
        k = len(c.points)
        ids = inv[off:off + k]
        segs.append(np.stack([ids, np.roll(ids, -1)], axis=1))
        marks.append(c.tags + _MARKER_OFFSET)
        off += k
    segs = np.concatenate(segs)
    marks = np.concatenate(marks)
    pslg = {"vertices": uniq, "segments": segs, "segment_markers": marks[:, None]}
    max_area = np.sqrt(3) / 4 * target_edge_length**2
    try:
        out = tr.triangulate(pslg, f"pq{min_angle:g}a{max_area:.12g}Q")
    except Exception as exc:  # the mesher signals failures with bare exceptions
        raise InvalidCandidate(f"meshing failed: {exc}") from exc
    tri = out.get("triangles")
    if tri is None or len(tri) == 0:
        raise InvalidCandidate("meshing produced no triangles")
    nodes = out["vertices"]
    tri = tri[_inside(nodes[tri].mean(axis=1), contours.all_segments())]
    if len(tri) == 0:
        raise InvalidCandidate("meshing produced no triangles")
    used = np.unique(tri)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    osegs = out["segments"]
    omarks = out["segment_markers"].ravel()
    seg_ok = np.all(remap[osegs] >= 0, axis=1) & (omarks >= _MARKER_OFFSET)
    mesh = BodyFittedMesh(
        nodes=nodes[used],
        triangles=remap[tri],
        segments=remap[osegs[seg_ok]],
        segment_tags=omarks[seg_ok] - _MARKER_OFFSET,
        target_edge_length=target_edge_length,
    )
    if np.any(mesh.areas <= 0):
        raise InvalidCandidate("inverted triangle")
    return mesh


def solve_mesh(mesh: BodyFittedMesh, E0: float, nu: float, force: float, load_length: float):
    """Clamp TAG_FIXED edges, apply uniform downward traction on TAG_LOAD edges."""
    fixed_nodes = np.unique(mesh.segments[mesh.segment_tags == TAG_FIXED])
    if len(fixed_nodes) == 0:
        raise InvalidCandidate("no clamped boundary")
    load_segs = mesh.segments[mesh.segment_tags == TAG_LOAD]
    if len(load_segs) == 0:
        raise InvalidCandidate("no loaded boundary")
    F = np.zeros(2 * len(mesh.nodes))
    d = mesh.nodes[load_segs[:, 1]] - mesh.nodes[load_segs[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    share = 0.5 * force * lengths / load_length
    np.add.at(F, 2 * load_segs[:, 0] + 1, -share)
    np.add.at(F, 2 * load_segs[:, 1] + 1, -share)
    fixed_dofs = np.sort(np.concatenate([2 * fixed_nodes, 2 * fixed_nodes + 1]))
    u, stress = solve_triangles(mesh.nodes, mesh.triangles, fixed_dofs, F, E0, nu, tol=SOLVE_TOL)
    return u, stress


def evaluate_hifi(rho, grid: StructuredGrid, config: HiFiConfig = None, keep_mesh: bool = False) -> HighFiResult:
    """Objectives (true max von Mises, V/Vmax) of one density field; never raises."""
    config = config or HiFiConfig()
    try:
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (grid.n_elements,) or not np.all(np.isfinite(rho)):
            raise InvalidCandidate("malformed density field")
        shape = binarize(rho, grid, config.threshold)
        if not check_connectivity(shape):
            raise InvalidCandidate("disconnected")
        shape = load_path_component(shape)
        contours = extract_contours(shape)
        contours = smooth_contours(contours, config.smoothing_iterations, config.damping)
        contours = drop_degenerate(contours)
        mesh = triangulate(contours, config.edge_length(grid), config.min_angle)
        _, stress = solve_mesh(mesh, config.E0, config.nu, config.force, grid.geometry.load_length)
        vm = von_mises(stress)
        if not np.all(np.isfinite(vm)):
            raise InvalidCandidate("non-finite stress")
        k = int(np.argmax(vm))
        return HighFiResult(
            sigma_max=float(vm[k]),
            volume_fraction=mesh.area / grid.geometry.area,
            valid=True,
            location=tuple(float(v) for v in mesh.centroids()[k]),
            n_triangles=len(mesh.triangles),
            min_angle=float(mesh.angles().min()),
            mesh=mesh if keep_mesh else None,
            stress_vm=vm if keep_mesh else None,
        )
    except InvalidCandidate as exc:
        return HighFiResult.invalid(str(exc))
    except SolverError as exc:
        return HighFiResult.invalid(f"solver: {exc}")


def write_vtk(mesh: BodyFittedMesh, path, cell_data: dict = None, title: str = "body-fitted mesh"):
    """Legacy ASCII VTK unstructured grid of the triangle mesh."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(mesh.nodes)} double")
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    nt = len(mesh.triangles)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f"{v:.17g}" for v in np.asarray(values, dtype=float)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
