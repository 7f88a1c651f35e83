"""Shared domain types: benchmark geometry and enumerations"""
import enum
import math
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class BoundaryTag(str, enum.Enum):
    """Boundary part an edge belongs to"""
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    NO_SLIP = "no_slip"
    CYLINDER = "cylinder"


class EnrichmentKind(str, enum.Enum):
    """Hierarchical enrichment of the base space"""
    P = "p"  # [Q4]^2 x Q2 on the same mesh
    H = "h"  # [Q2]^2 x Q1 on the uniformly refined mesh


class GoalKind(str, enum.Enum):
    """Quantity of interest"""
    PRESSURE_DIFF = "dp"
    DRAG = "drag"
    LIFT = "lift"
    COMBINED = "combined"


# Dirichlet boundary parts with a zero velocity
WALL_TAGS = (BoundaryTag.NO_SLIP, BoundaryTag.CYLINDER)


class DomainSpec(BaseModel):
    """Benchmark channel with a circular obstacle and the physical constants"""
    model_config = ConfigDict(frozen=True)

    channel_length: float = Field(2.2, gt=0, description="Channel length")
    channel_height: float = Field(0.41, gt=0, description="Channel height H")
    cylinder_center: Tuple[float, float] = Field((0.2, 0.2), description="Obstacle center")
    cylinder_radius: float = Field(0.05, gt=0, description="Obstacle radius")
    viscosity: float = Field(1e-3, gt=0, description="Kinematic viscosity")
    inflow_peak: float = Field(0.3, gt=0, description="Peak inflow speed")

    @model_validator(mode="after")
    def _cylinder_inside_channel(self):
        cx, cy = self.cylinder_center
        r = self.cylinder_radius
        if not (0.0 < cx - r and cx + r < self.channel_length
                and 0.0 < cy - r and cy + r < self.channel_height):
            raise ValueError("cylinder must lie strictly inside the channel")
        return self

    @property
    def domain_area(self) -> float:
        """Area of the channel minus the exact disk"""
        return self.channel_length * self.channel_height - math.pi * self.cylinder_radius ** 2

    def inflow_velocity(self, y: float) -> Tuple[float, float]:
        """Parabolic inflow profile (peak * 4y(H-y)/H^2, 0)"""
        h = self.channel_height
        return (self.inflow_peak * 4.0 * y * (h - y) / (h * h), 0.0)

    def project_to_cylinder(self, x: float, y: float) -> Tuple[float, float]:
        """Radial projection of a point onto the obstacle circle"""
        cx, cy = self.cylinder_center
        dx, dy = x - cx, y - cy
        dist = math.hypot(dx, dy)
        if dist == 0.0:
            raise ValueError("cannot project the cylinder center")
        scale = self.cylinder_radius / dist
        return (cx + dx * scale, cy + dy * scale)
