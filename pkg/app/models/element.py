"""Reference element: tensor-product Lagrange bases, Gauss rules and bilinear cell maps"""
import functools
from typing import Tuple

import numpy as np

from app.utils.errors import DegenerateCellError, ElementError

SUPPORTED_DEGREES = (1, 2, 4)
MAX_GAUSS_POINTS = 8

# Reference vertices in counter-clockwise order
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def lagrange_1d(nodes: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Values and derivatives of the 1D Lagrange polynomials on `nodes`.

    Args:
        nodes: Interpolation nodes, shape (k+1,)
        t: Evaluation points, shape (m,)

    Returns:
        (values, derivatives), each of shape (m, k+1)
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    n = len(nodes)
    values = np.ones((t.size, n))
    derivs = np.zeros((t.size, n))
    for j in range(n):
        for m in range(n):
            if m != j:
                values[:, j] *= (t - nodes[m]) / (nodes[j] - nodes[m])
        for l in range(n):
            if l == j:
                continue
            term = np.full(t.size, 1.0 / (nodes[j] - nodes[l]))
            for m in range(n):
                if m != j and m != l:
                    term *= (t - nodes[m]) / (nodes[j] - nodes[m])
            derivs[:, j] += term
    return values, derivs


class LagrangeBasis:
    """
    Tensor-product Lagrange basis of degree k on [0,1]^2 with equispaced nodes.

    Node (ix, iy) has index ix + (k+1)*iy.
    """

    def __init__(self, degree: int):
        if degree not in SUPPORTED_DEGREES:
            raise ElementError(f"unsupported polynomial degree {degree}")
        self.degree = degree
        self.nodes_1d = np.linspace(0.0, 1.0, degree + 1)
        iy, ix = np.meshgrid(np.arange(degree + 1), np.arange(degree + 1), indexing="ij")
        self.node_ij = np.stack([ix.ravel(), iy.ravel()], axis=1)
        self.nodes = self.node_ij / float(degree)
        self.nodes.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return (self.degree + 1) ** 2

    def node_index(self, ix: int, iy: int) -> int:
        return ix + (self.degree + 1) * iy

    def evaluate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate all basis functions at reference points.

        Args:
            points: Reference points, shape (m, 2)

        Returns:
            (values (m, n_nodes), gradients (m, n_nodes, 2))
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        m = points.shape[0]
        vx, dx = lagrange_1d(self.nodes_1d, points[:, 0])
        vy, dy = lagrange_1d(self.nodes_1d, points[:, 1])
        values = (vy[:, :, None] * vx[:, None, :]).reshape(m, -1)
        grads = np.empty((m, self.n_nodes, 2))
        grads[:, :, 0] = (vy[:, :, None] * dx[:, None, :]).reshape(m, -1)
        grads[:, :, 1] = (dy[:, :, None] * vx[:, None, :]).reshape(m, -1)
        return values, grads

    def __repr__(self) -> str:
        return f"LagrangeBasis(degree={self.degree})"


@functools.lru_cache(maxsize=None)
def get_basis(degree: int) -> LagrangeBasis:
    """Shared basis instance per degree"""
    return LagrangeBasis(degree)


def shape_eval(basis: LagrangeBasis, i: int, xi) -> Tuple[float, np.ndarray]:
    """
    Value and reference gradient of the i-th basis function at xi.

    Raises:
        ElementError: node index or point out of range
    """
    if not 0 <= i < basis.n_nodes:
        raise ElementError(f"node index {i} out of range for degree {basis.degree}")
    xi = np.asarray(xi, dtype=float).reshape(2)
    if np.any(xi < -1e-12) or np.any(xi > 1.0 + 1e-12):
        raise ElementError(f"reference point {tuple(xi)} outside [0,1]^2")
    values, grads = basis.evaluate(xi[None, :])
    return float(values[0, i]), grads[0, i].copy()


class QuadratureRule:
    """Tensor Gauss-Legendre rule on [0,1]^2; weights sum to 1"""

    def __init__(self, n: int, points: np.ndarray, weights: np.ndarray):
        self.n = n
        self.points = points
        self.weights = weights
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return len(self.weights)


@functools.lru_cache(maxsize=None)
def gauss_rule_1d(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0,1]"""
    if not 1 <= n <= MAX_GAUSS_POINTS:
        raise ElementError(f"unsupported number of Gauss points {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    points = 0.5 * (x + 1.0)
    weights = 0.5 * w
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


@functools.lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with n points per direction, index ix + n*iy"""
    x, w = gauss_rule_1d(n)
    py, px = np.meshgrid(x, x, indexing="ij")
    wy, wx = np.meshgrid(w, w, indexing="ij")
    points = np.stack([px.ravel(), py.ravel()], axis=1)
    return QuadratureRule(n, points, (wx * wy).ravel())


# ============================================================================
# BILINEAR CELL MAP
# ============================================================================

def bilinear_shapes(points) -> Tuple[np.ndarray, np.ndarray]:
    """Q1 geometry shape functions in vertex order, values (m,4) and gradients (m,4,2)"""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    s, t = points[:, 0], points[:, 1]
    values = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=1)
    grads = np.empty((points.shape[0], 4, 2))
    grads[:, :, 0] = np.stack([-(1 - t), 1 - t, t, -t], axis=1)
    grads[:, :, 1] = np.stack([-(1 - s), -s, s, 1 - s], axis=1)
    return values, grads


def map_points(coords: np.ndarray, points) -> np.ndarray:
    """Physical images of reference points, coords (nc,4,2) -> (nc,m,2)"""
    values, _ = bilinear_shapes(points)
    return np.einsum("qk,ckd->cqd", values, coords)


def map_geometry(coords: np.ndarray, points, check: bool = True):
    """
    Bilinear map data for a batch of cells at shared reference points.

    Args:
        coords: Cell vertex coordinates, shape (nc, 4, 2)
        points: Reference points, shape (m, 2)
        check: Raise on non-positive Jacobian determinants

    Returns:
        (x (nc,m,2), J (nc,m,2,2), det (nc,m), J^{-T} (nc,m,2,2))
    """
    values, grads = bilinear_shapes(points)
    x = np.einsum("qk,ckd->cqd", values, coords)
    jac = np.einsum("qkb,cka->cqab", grads, coords)
    det, inv_t = _det_and_inverse_transpose(jac)
    if check and np.any(det <= 0.0):
        bad = int(np.argwhere(det <= 0.0)[0, 0])
        raise DegenerateCellError(f"non-positive Jacobian determinant in cell batch index {bad}")
    return x, jac, det, inv_t


def point_geometry(coords: np.ndarray, xi: np.ndarray):
    """Bilinear map data with one reference point per cell, coords (m,4,2), xi (m,2)"""
    values, grads = bilinear_shapes(xi)
    x = np.einsum("mk,mkd->md", values, coords)
    jac = np.einsum("mkb,mka->mab", grads, coords)
    det, inv_t = _det_and_inverse_transpose(jac)
    return x, jac, det, inv_t


def _det_and_inverse_transpose(jac: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    inv_t = np.empty_like(jac)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_t[..., 0, 0] = jac[..., 1, 1] / det
        inv_t[..., 0, 1] = -jac[..., 1, 0] / det
        inv_t[..., 1, 0] = -jac[..., 0, 1] / det
        inv_t[..., 1, 1] = jac[..., 0, 0] / det
    return det, inv_t


def inverse_map(coords: np.ndarray, x: np.ndarray, tol: float = 1e-12,
                max_iter: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """
    Invert the bilinear map by Newton's method, one point per cell.

    Args:
        coords: Cell vertex coordinates, shape (m, 4, 2)
        x: Physical points, shape (m, 2)

    Returns:
        (reference points (m, 2), converged mask (m,))
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 4, 2)
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    xi = np.full_like(x, 0.5)
    converged = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        values, grads = bilinear_shapes(xi)
        fx = np.einsum("mk,mkd->md", values, coords)
        jac = np.einsum("mkb,mka->mab", grads, coords)
        det, inv_t = _det_and_inverse_transpose(jac)
        resid = fx - x
        step = np.einsum("mba,mb->ma", inv_t, resid)
        step[~np.isfinite(step)] = 0.0
        xi = xi - step
        converged = np.max(np.abs(step), axis=1) <= tol
        if np.all(converged):
            break
    return xi, converged


class CellMapping:
    """Bilinear map of the reference square onto one quadrilateral"""

    def __init__(self, vertices):
        self.vertices = np.asarray(vertices, dtype=float).reshape(4, 2)

    def point(self, xi) -> np.ndarray:
        return map_points(self.vertices[None], np.asarray(xi, dtype=float).reshape(-1, 2))[0]

    def inverse(self, x, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        coords = np.broadcast_to(self.vertices, (len(x), 4, 2))
        return inverse_map(coords, x, tol=tol)


def map_cell(mapping: CellMapping, xi) -> Tuple[np.ndarray, float, np.ndarray]:
    """
    Physical point, Jacobian determinant and inverse-transpose Jacobian at xi.

    Raises:
        DegenerateCellError: det J_F <= 0
    """
    xi = np.asarray(xi, dtype=float).reshape(1, 2)
    x, _, det, inv_t = map_geometry(mapping.vertices[None], xi)
    return x[0, 0], float(det[0, 0]), inv_t[0, 0]
