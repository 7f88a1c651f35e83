"""Result schemas: solver reports, goal values, estimator parts and loop records"""
import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.models.base import EnrichmentKind, GoalKind

BASE_GOALS = (GoalKind.PRESSURE_DIFF, GoalKind.DRAG, GoalKind.LIFT)

CSV_COLUMNS = (
    "step", "dofs_primal", "dofs_enriched",
    "dp", "drag", "lift", "J_E",
    "dp_enriched", "drag_enriched", "lift_enriched",
    "eta_plus", "part_primal", "part_adjoint", "iter_part", "eta_R", "eta_E", "I_eff",
    "err_ref", "err_ref_enriched",
    "sat_dp", "sat_drag", "sat_lift",
)


class LinearSolveReport(BaseModel):
    """Diagnostics of one direct solve"""
    n: int = Field(..., description="System dimension")
    residual_norm: float = Field(..., description="||Ax - b||_2")
    pivot_growth: float = Field(..., description="max|U| / max|A|")
    elapsed: float = Field(..., description="Wall-clock seconds")
    refined: bool = Field(False, description="An iterative-refinement step was applied")


class NewtonStep(BaseModel):
    """One logged Newton iterate"""
    iteration: int
    residual: float
    damping: float = Field(..., gt=0.0, le=1.0)
    weighted: Optional[float] = Field(None, description="rho(u)(z) when a weight is supplied")


class NewtonReport(BaseModel):
    """Newton history; the first entry is the initial iterate"""
    steps: List[NewtonStep] = Field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.steps) - 1, 0)

    @property
    def final_residual(self) -> float:
        return self.steps[-1].residual if self.steps else math.nan


class GoalValues(BaseModel):
    """Benchmark functionals of one solution"""
    dp: float = Field(..., description="Pressure difference p(X1) - p(X2)")
    drag: float = Field(..., description="Drag coefficient")
    lift: float = Field(..., description="Lift coefficient")
    combined: float = Field(0.0, ge=0.0, description="J_E with the frozen weights of the step")
    differences: Dict[str, float] = Field(default_factory=dict, description="J_i(u+) - J_i(u_h)")

    def get(self, kind: GoalKind) -> float:
        if kind == GoalKind.COMBINED:
            return self.combined
        return float(getattr(self, kind.value))

    def as_dict(self) -> Dict[str, float]:
        return {"dp": self.dp, "drag": self.drag, "lift": self.lift}


class FunctionalDef(BaseModel):
    """
    Goal functional. For COMBINED the signs s_i, the scales |J_i(u_h)| and the
    anchor values J_i(u+) are frozen for one adaptive step.
    """
    kind: GoalKind
    signs: Dict[str, int] = Field(default_factory=dict)
    scales: Dict[str, float] = Field(default_factory=dict)
    anchor: Dict[str, float] = Field(default_factory=dict)

    def component_weights(self) -> Dict[str, float]:
        """Weights of dp, drag and lift in the linear(ised) functional"""
        if self.kind != GoalKind.COMBINED:
            return {self.kind.value: 1.0}
        weights = {}
        for name, sign in self.signs.items():
            scale = self.scales.get(name, 0.0)
            weights[name] = -sign / scale if scale > 0.0 else 0.0
        return weights

    def combined_value(self, values: Dict[str, float]) -> float:
        """J_E(v) = sum_i |J_i(u+) - J_i(v)| / |J_i(u_h)| over included components"""
        total = 0.0
        for name, scale in self.scales.items():
            if scale > 0.0:
                total += abs(self.anchor[name] - values[name]) / scale
        return total


class EstimatorBreakdown(BaseModel):
    """All estimator parts of one adaptive step"""
    enrichment: EnrichmentKind
    eta_plus: float
    part_primal: float
    part_adjoint: float
    iter_part: float
    eta_R: float
    eta_R_quadrature: float
    eta_E: float
    I_eff: float = math.nan
    indicators: Dict[int, float] = Field(default_factory=dict)


class ReferenceValues(BaseModel):
    """High-resolution reference functionals"""
    dp: float
    drag: float
    lift: float
    dofs: int = Field(..., description="Dofs of the solution the values come from")
    config_hash: str

    def as_dict(self) -> Dict[str, float]:
        return {"dp": self.dp, "drag": self.drag, "lift": self.lift}


class LoopRecord(BaseModel):
    """One completed adaptive step"""
    step: int
    n_cells: int
    dofs_primal: int
    dofs_enriched: int
    base: GoalValues
    enriched: GoalValues
    estimator: EstimatorBreakdown
    err_ref: float = math.nan
    err_ref_enriched: float = math.nan
    relative_errors: Dict[str, float] = Field(default_factory=dict)
    saturation: Dict[str, Optional[bool]] = Field(default_factory=dict)
    newton_iterations: Dict[str, int] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)

    def to_row(self) -> "CsvRow":
        est = self.estimator
        return CsvRow(
            step=self.step,
            dofs_primal=self.dofs_primal,
            dofs_enriched=self.dofs_enriched,
            dp=self.base.dp, drag=self.base.drag, lift=self.base.lift, J_E=self.base.combined,
            dp_enriched=self.enriched.dp, drag_enriched=self.enriched.drag, lift_enriched=self.enriched.lift,
            eta_plus=est.eta_plus, part_primal=est.part_primal, part_adjoint=est.part_adjoint,
            iter_part=est.iter_part, eta_R=est.eta_R, eta_E=est.eta_E, I_eff=est.I_eff,
            err_ref=self.err_ref, err_ref_enriched=self.err_ref_enriched,
            sat_dp=self.saturation.get("dp"),
            sat_drag=self.saturation.get("drag"),
            sat_lift=self.saturation.get("lift"),
        )


class CsvRow(BaseModel):
    """One line of records.csv, columns in CSV_COLUMNS order"""
    step: int
    dofs_primal: int
    dofs_enriched: int
    dp: float
    drag: float
    lift: float
    J_E: float
    dp_enriched: float
    drag_enriched: float
    lift_enriched: float
    eta_plus: float
    part_primal: float
    part_adjoint: float
    iter_part: float
    eta_R: float
    eta_E: float
    I_eff: float
    err_ref: float
    err_ref_enriched: float
    sat_dp: Optional[bool] = None
    sat_drag: Optional[bool] = None
    sat_lift: Optional[bool] = None
