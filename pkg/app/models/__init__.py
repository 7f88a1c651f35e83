"""Domain models: benchmark domain, elements, meshes and finite element spaces"""
from app.models.base import BoundaryTag, DomainSpec, EnrichmentKind, GoalKind
from app.models.element import CellMapping, LagrangeBasis, QuadratureRule
from app.models.mesh import Cell, Mesh
from app.models.space import ConstraintSet, FeSystem, MixedVector

__all__ = [
    "BoundaryTag",
    "DomainSpec",
    "EnrichmentKind",
    "GoalKind",
    "CellMapping",
    "LagrangeBasis",
    "QuadratureRule",
    "Cell",
    "Mesh",
    "ConstraintSet",
    "FeSystem",
    "MixedVector",
]
