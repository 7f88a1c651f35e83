"""Run configuration schemas"""
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from app.models.base import DomainSpec, EnrichmentKind, GoalKind


class NewtonControls(BaseModel):
    """Stopping and damping controls of the Newton solver"""
    abs_tol: float = Field(1e-11, gt=0, description="Hard floor on the algebraic residual norm")
    max_iter: int = Field(25, ge=1, description="Maximum number of Newton updates")
    max_halvings: int = Field(6, ge=0, description="Damping factors 1, 1/2, ..., 2^-max_halvings")
    balance_fraction: float = Field(1e-2, gt=0, description="Weighted-residual stop relative to |eta|")


class AdaptiveConfig(BaseModel):
    """Adaptive loop configuration"""
    enrichment: EnrichmentKind = Field(EnrichmentKind.P, description="Hierarchical enrichment kind")
    goal: GoalKind = Field(GoalKind.COMBINED, description="Quantity of interest")
    marking_fraction: float = Field(0.3, ge=0.0, le=1.0, description="Bulk marking fraction theta")
    max_dofs: int = Field(100000, gt=0, description="Stop once the base system exceeds this size")
    max_steps: int = Field(12, ge=1, description="Maximum number of adaptive steps")
    pre_refinements: int = Field(0, ge=0, description="Uniform refinements of the initial mesh")
    stokes_mode: bool = Field(False, description="Drop the convection term")
    newton: NewtonControls = Field(default_factory=NewtonControls)
    domain: DomainSpec = Field(default_factory=DomainSpec)
    max_linear_dofs: int = Field(400000, gt=0, description="Direct solver size cap")

    @model_validator(mode="after")
    def _dofs_within_cap(self):
        if self.max_dofs > self.max_linear_dofs:
            raise ValueError("max_dofs must not exceed the linear solver cap")
        return self

    @property
    def balance_fraction(self) -> float:
        return self.newton.balance_fraction


class RunConfig(AdaptiveConfig):
    """Command-line run: adaptive configuration plus output controls"""
    output_dir: Path = Field(Path("output"), description="Output directory")
    emit_vtk: bool = Field(False, description="Write step_k.vtk per adaptive step")
    emit_figures: bool = Field(False, description="Run p, h and uniform series and write figure data")
    uniform: bool = Field(False, description="Run uniform refinement instead of the adaptive loop")
    reference_cache: Path = Field(Path(".cache/reference.json"), description="Reference value cache")
    reference_refinements: int = Field(3, ge=0, description="Uniform refinements of the reference run")
    compute_reference: bool = Field(False, description="Compute missing reference values for effectivities")
    log_level: Optional[str] = Field(None, description="Logging level override")

    def adaptive(self) -> AdaptiveConfig:
        return AdaptiveConfig(**{name: getattr(self, name) for name in AdaptiveConfig.model_fields})
