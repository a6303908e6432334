"""Plane-stress linear elasticity on the structured grid and on triangle meshes."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import BCSet, MaterialModel, StructuredGrid

# von Mises quadratic form in Voigt notation (sx, sy, txy)
VM_FORM = np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def elasticity_matrix(E: float, nu: float) -> np.ndarray:
    return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def q4_strain_displacement(a: float, xi: float, eta: float) -> np.ndarray:
    """B matrix of a square bilinear element of side ``a`` at natural coords."""
    dN_dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dN_deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    dN_dx = dN_dxi * 2 / a
    dN_dy = dN_deta * 2 / a
    B = np.zeros((3, 8))
    B[0, 0::2] = dN_dx
    B[1, 1::2] = dN_dy
    B[2, 0::2] = dN_dy
    B[2, 1::2] = dN_dx
    return B


def element_stiffness_unit(element_size: float, nu: float) -> np.ndarray:
    """8x8 Q4 plane-stress stiffness for E = 1, unit thickness, 2x2 Gauss."""
    D = elasticity_matrix(1.0, nu)
    g = 1 / np.sqrt(3)
    jac = (element_size / 2) ** 2
    Ke = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            B = q4_strain_displacement(element_size, xi, eta)
            Ke += B.T @ D @ B * jac
    return 0.5 * (Ke + Ke.T)


def stress_matrix(element_size: float, material: MaterialModel) -> np.ndarray:
    """Maps element displacements to centroid stress with the solid modulus."""
    return elasticity_matrix(material.E0, material.nu) @ q4_strain_displacement(element_size, 0, 0)


def von_mises(stress) -> np.ndarray:
    s = np.asarray(stress, dtype=float)
    sx, sy, txy = s[..., 0], s[..., 1], s[..., 2]
    return np.sqrt(np.maximum(sx**2 - sx * sy + sy**2 + 3 * txy**2, 0.0))


class StructuredFEM:
    """Assembly, solve and stress recovery for one grid and material."""

    def __init__(self, grid: StructuredGrid, material: MaterialModel):
        self.grid = grid
        self.material = material
        self.Ke = element_stiffness_unit(grid.element_size, material.nu)
        self.S = stress_matrix(grid.element_size, material)
        edofs = grid.element_dofs
        self.edofs = edofs
        self.iK = np.repeat(edofs, 8, axis=1).ravel()
        self.jK = np.tile(edofs, (1, 8)).ravel()

    def assemble(self, rho_filtered) -> sp.csr_matrix:
        E = self.material.simp_modulus(rho_filtered)
        return self.assemble_moduli(E)

    def assemble_moduli(self, E) -> sp.csr_matrix:
        vals = (self.Ke.ravel()[None, :] * np.asarray(E)[:, None]).ravel()
        n = self.grid.n_dofs
        K = sp.coo_matrix((vals, (self.iK, self.jK)), shape=(n, n)).tocsr()
        return K

    def stresses(self, u) -> np.ndarray:
        """Centroid Voigt stress (n_elements, 3)."""
        return u[self.edofs] @ self.S.T


def assemble(grid: StructuredGrid, rho_filtered, material: MaterialModel) -> sp.csr_matrix:
    return StructuredFEM(grid, material).assemble(rho_filtered)


def stresses(grid: StructuredGrid, u, material: MaterialModel):
    """Centroid stresses and von Mises values for every active element."""
    s = StructuredFEM(grid, material).stresses(u)
    return s, von_mises(s)


def solve(K, F, fixed_dofs, tol: float = 1e-10, factor=False):
    """Solve K u = F with the fixed DOFs eliminated.

    Returns ``u`` (and the sparse LU of the reduced matrix when ``factor``
    is true, for reuse in adjoint solves).
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    free = np.ones(n, dtype=bool)
    free[np.asarray(fixed_dofs, dtype=int)] = False
    free = np.flatnonzero(free)
    F = np.asarray(F, dtype=float)
    u = np.zeros(n)
    Kff = K[free][:, free].tocsc()
    Ff = F[free]
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise SolverError(f"stiffness factorization failed: {exc}") from exc
    if np.any(Ff):
        uf = lu.solve(Ff)
        res = np.linalg.norm(Kff @ uf - Ff) / np.linalg.norm(Ff)
        if not np.isfinite(res) or res > tol:
            # one step of iterative refinement before giving up
            uf = uf + lu.solve(Ff - Kff @ uf)
            res = np.linalg.norm(Kff @ uf - Ff) / np.linalg.norm(Ff)
            if not np.isfinite(res) or res > tol:
                raise SolverError(f"linear solve residual {res:.3e} above tol {tol:.1e}", res)
        u[free] = uf
    if factor:
        return u, _ReducedLU(lu, free, n)
    return u


class _ReducedLU:
    def __init__(self, lu, free, n):
        self.lu, self.free, self.n = lu, free, n

    def solve(self, rhs):
        out = np.zeros(self.n)
        out[self.free] = self.lu.solve(np.asarray(rhs)[self.free])
        return out


def solve_structured(fem: StructuredFEM, bcs: BCSet, rho_filtered, tol=1e-10):
    K = fem.assemble(rho_filtered)
    return solve(K, bcs.force, bcs.fixed_dofs, tol)


# ----------------------------------------------------------------------------
# linear triangles (body-fitted evaluation)


def cst_matrices(nodes, triangles, E: float, nu: float):
    """Per-triangle stiffness (n, 6, 6), stress operator (n, 3, 6) and areas."""
    xy = nodes[triangles]  # (n, 3, 2)
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    B = np.zeros((len(triangles), 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    B /= (2 * area)[:, None, None]
    D = elasticity_matrix(E, nu)
    Ke = np.einsum("eki,kl,elj->eij", B, D, B) * area[:, None, None]
    S = np.einsum("kl,elj->ekj", D, B)
    return Ke, S, area


def solve_triangles(nodes, triangles, fixed_dofs, force, E: float, nu: float, tol=1e-10):
    """Solid-only CST analysis with a single modulus. Returns displacements and per-triangle stress."""
    Ke, S, area = cst_matrices(nodes, triangles, E, nu)
    if np.any(area <= 0):
        raise SolverError("non-positive triangle area")
    edofs = np.stack([2 * triangles, 2 * triangles + 1], axis=-1).reshape(len(triangles), 6)
    n = 2 * len(nodes)
    iK = np.repeat(edofs, 6, axis=1).ravel()
    jK = np.tile(edofs, (1, 6)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (iK, jK)), shape=(n, n)).tocsr()
    u = solve(K, force, fixed_dofs, tol)
    stress = np.einsum("ekj,ej->ek", S, u[edofs])
    return u, stress
