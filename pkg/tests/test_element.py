import numpy as np
import pytest

from app.models.element import (
    CellMapping, LagrangeBasis, gauss_rule, gauss_rule_1d, get_basis, inverse_map, lagrange_1d,
    map_cell, map_geometry, map_points, shape_eval,
)
from app.utils.errors import DegenerateCellError, ElementError

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
DISTORTED = np.array([[0.0, 0.0], [1.2, 0.1], [1.0, 0.9], [-0.1, 1.1]])


@pytest.mark.parametrize("degree", [1, 2, 4])
def test_basis_is_a_partition_of_unity(degree, rng):
    basis = get_basis(degree)
    points = rng.random((20, 2))
    values, grads = basis.evaluate(points)
    assert values.shape == (20, basis.n_nodes)
    assert np.allclose(values.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("degree", [1, 2, 4])
def test_basis_is_nodal(degree):
    basis = get_basis(degree)
    values, _ = basis.evaluate(basis.nodes)
    assert np.allclose(values, np.eye(basis.n_nodes), atol=1e-13)


def test_lagrange_1d_reproduces_linear_function():
    nodes = np.linspace(0.0, 1.0, 5)
    t = np.array([0.1, 0.37, 0.9])
    values, derivs = lagrange_1d(nodes, t)
    assert values @ nodes == pytest.approx(t)
    assert derivs @ nodes == pytest.approx(np.ones(3))


def test_unsupported_degree_raises():
    with pytest.raises(ElementError):
        LagrangeBasis(3)


def test_shape_eval_checks_arguments():
    basis = get_basis(2)
    value, grad = shape_eval(basis, 4, (0.5, 0.5))
    assert value == pytest.approx(1.0)
    assert grad == pytest.approx(np.zeros(2), abs=1e-13)
    with pytest.raises(ElementError):
        shape_eval(basis, 9, (0.5, 0.5))
    with pytest.raises(ElementError):
        shape_eval(basis, 0, (1.5, 0.5))


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_gauss_rule_integrates_monomials_exactly(n):
    rule = gauss_rule(n)
    assert rule.weights.sum() == pytest.approx(1.0)
    for a in range(2 * n):
        for b in range(2 * n):
            integral = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            assert integral == pytest.approx(1.0 / ((a + 1) * (b + 1)), rel=1e-13)


def test_gauss_rule_1d_range():
    with pytest.raises(ElementError):
        gauss_rule_1d(0)
    with pytest.raises(ElementError):
        gauss_rule_1d(9)


def test_map_geometry_of_parallelogram():
    coords = np.array([[[0.0, 0.0], [2.0, 0.0], [3.0, 1.0], [1.0, 1.0]]])
    x, jac, det, inv_t = map_geometry(coords, gauss_rule(2).points)
    assert np.allclose(det, 2.0)
    assert np.allclose(np.einsum("nqab,nqcb->nqac", jac, inv_t), np.eye(2))
    assert map_points(coords, np.array([[0.5, 0.5]]))[0, 0] == pytest.approx([1.5, 0.5])


def test_inverted_cell_raises():
    clockwise = UNIT_SQUARE[::-1][None]
    with pytest.raises(DegenerateCellError):
        map_geometry(clockwise, gauss_rule(1).points)


def test_inverse_map_recovers_reference_points(rng):
    xi = rng.random((15, 2))
    coords = np.broadcast_to(DISTORTED, (15, 4, 2))
    x = np.einsum("mkd,mk->md", coords, np.stack(
        [(1 - xi[:, 0]) * (1 - xi[:, 1]), xi[:, 0] * (1 - xi[:, 1]), xi[:, 0] * xi[:, 1], (1 - xi[:, 0]) * xi[:, 1]],
        axis=1))
    found, converged = inverse_map(coords, x)
    assert converged.all()
    assert np.allclose(found, xi, atol=1e-12)


def test_cell_mapping():
    mapping = CellMapping(2.0 * UNIT_SQUARE)
    x, det, _ = map_cell(mapping, (0.25, 0.5))
    assert x == pytest.approx([0.5, 1.0])
    assert det == pytest.approx(4.0)
    xi, ok = mapping.inverse([[1.0, 1.5]])
    assert ok.all()
    assert xi[0] == pytest.approx([0.5, 0.75])
