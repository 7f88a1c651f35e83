"""
Navier-Stokes forms service.

Semilinear form (velocity u, pressure p, test function v = (v_u, v_p)):

    A(u)(v) = (nu (grad u + grad u^T), grad v_u) + ((u . grad) u, v_u)
              + (p, div v_u) - (div u, v_p)

together with its first and second derivatives and a damped Newton solver.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy import sparse

from app.config import settings
from app.models.base import DomainSpec
from app.models.element import QuadratureRule, gauss_rule, map_geometry
from app.models.space import PRESSURE, VEL_X, VEL_Y, FeSystem, MixedVector
from app.schemas.records import NewtonReport, NewtonStep
from app.schemas.run import NewtonControls
from app.services.linalg_service import LinalgService
from app.utils.errors import NewtonError

logger = logging.getLogger(__name__)

IDENTITY = np.eye(2)


@dataclass
class FieldSample:
    """A field and its gradients at the quadrature points of a block of cells"""
    u: np.ndarray       # (c, q, 2)
    grad_u: np.ndarray  # (c, q, 2, 2), [comp, direction]
    p: np.ndarray       # (c, q)
    grad_p: np.ndarray  # (c, q, 2)

    @property
    def div_u(self) -> np.ndarray:
        return self.grad_u[..., 0, 0] + self.grad_u[..., 1, 1]


class FormContext:
    """Quadrature and geometry data of one system, shared by all form evaluations"""

    def __init__(self, system: FeSystem, spec: Optional[DomainSpec] = None, convection: bool = True,
                 rule: Optional[QuadratureRule] = None, chunk_size: Optional[int] = None):
        self.system = system
        self.spec = spec or system.mesh.spec
        self.nu = self.spec.viscosity
        self.convection = convection
        self.rule = rule or gauss_rule(system.vel_degree + 1)
        self.chunk_size = chunk_size or settings.ASSEMBLY_CHUNK_SIZE

        self.phi, self.ref_grad_v = system.vel_basis.evaluate(self.rule.points)
        self.psi, self.ref_grad_p = system.pre_basis.evaluate(self.rule.points)
        _, _, det, inv_t = map_geometry(system.cell_coordinates(), self.rule.points)
        self.jxw = det * self.rule.weights
        self.inv_t = inv_t
        self.sx = system.local_slice(VEL_X)
        self.sy = system.local_slice(VEL_Y)
        self.sp = system.local_slice(PRESSURE)

    def chunks(self) -> Iterator[slice]:
        for start in range(0, self.system.n_cells, self.chunk_size):
            yield slice(start, min(start + self.chunk_size, self.system.n_cells))

    def grad_v(self, cells: slice) -> np.ndarray:
        """Physical velocity-basis gradients (c, q, i, 2)"""
        return np.einsum("cqab,qib->cqia", self.inv_t[cells], self.ref_grad_v)

    def grad_p(self, cells: slice) -> np.ndarray:
        return np.einsum("cqab,qib->cqia", self.inv_t[cells], self.ref_grad_p)

    def sample(self, vector: MixedVector, cells: slice = slice(None)) -> FieldSample:
        """Evaluate a vector of this system at the quadrature points"""
        if vector.system is not self.system:
            raise ValueError("vector does not belong to this form context")
        local = vector.values[self.system.cell_dofs[cells]]
        gv = self.grad_v(cells)
        gp = self.grad_p(cells)
        nc, nq = gv.shape[0], gv.shape[1]
        u = np.empty((nc, nq, 2))
        grad_u = np.empty((nc, nq, 2, 2))
        for comp, block in ((0, self.sx), (1, self.sy)):
            u[:, :, comp] = np.einsum("qi,ci->cq", self.phi, local[:, block])
            grad_u[:, :, comp, :] = np.einsum("cqid,ci->cqd", gv, local[:, block])
        p = np.einsum("qi,ci->cq", self.psi, local[:, self.sp])
        grad_p = np.einsum("cqid,ci->cqd", gp, local[:, self.sp])
        return FieldSample(u, grad_u, p, grad_p)

    # ------------------------------------------------------------------
    # Pointwise flux densities
    # ------------------------------------------------------------------
    def primal_flux(self, s: FieldSample) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (K, f, g) with A(u)(v) = integral of K : grad v_u + f . v_u + g v_p
        """
        sym = s.grad_u + np.swapaxes(s.grad_u, -1, -2)
        flux = self.nu * sym + s.p[..., None, None] * IDENTITY
        if self.convection:
            force = np.einsum("cqd,cqad->cqa", s.u, s.grad_u)
        else:
            force = np.zeros_like(s.u)
        return flux, force, -s.div_u

    def adjoint_flux(self, su: FieldSample, sz: FieldSample) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (H, G_u, G_p) with A'(u)(v, z) = integral of H : grad v_u + G_u . v_u + G_p v_p
        """
        flux = self.nu * (sz.grad_u + np.swapaxes(sz.grad_u, -1, -2)) - sz.p[..., None, None] * IDENTITY
        if self.convection:
            flux = flux + np.einsum("cqa,cqb->cqab", sz.u, su.u)
            force = np.einsum("cqad,cqa->cqd", su.grad_u, sz.u)
        else:
            force = np.zeros_like(sz.u)
        return flux, force, sz.div_u

    def test_with_basis(self, cells: slice, flux: np.ndarray, force: np.ndarray,
                        pressure: np.ndarray) -> np.ndarray:
        """Local vectors (c, n_local) of integral K : grad v + f . v + g v_p over all basis v"""
        w = self.jxw[cells]
        gv = self.grad_v(cells)
        out = np.empty((w.shape[0], self.system.n_local))
        for comp, block in ((0, self.sx), (1, self.sy)):
            out[:, block] = (np.einsum("cq,cqd,cqid->ci", w, flux[:, :, comp, :], gv)
                             + np.einsum("cq,qi->ci", w * force[:, :, comp], self.phi))
        out[:, self.sp] = np.einsum("cq,qi->ci", w * pressure, self.psi)
        return out


# ============================================================================
# FORM EVALUATION
# ============================================================================

class FormsService:
    """Service for the Navier-Stokes form, its derivatives and Newton's method"""

    @staticmethod
    def cell_form_values(ctx: FormContext, u: MixedVector, w: MixedVector) -> np.ndarray:
        """Per-cell contributions of A(u)(w), shape (n_cells,)"""
        out = np.empty(ctx.system.n_cells)
        for cells in ctx.chunks():
            su, sw = ctx.sample(u, cells), ctx.sample(w, cells)
            flux, force, g = ctx.primal_flux(su)
            density = (np.einsum("cqab,cqab->cq", flux, sw.grad_u)
                       + np.einsum("cqa,cqa->cq", force, sw.u) + g * sw.p)
            out[cells] = np.sum(ctx.jxw[cells] * density, axis=1)
        return out

    @staticmethod
    def form_value(ctx: FormContext, u: MixedVector, w: MixedVector) -> float:
        return float(np.sum(FormsService.cell_form_values(ctx, u, w)))

    @staticmethod
    def cell_linearized_values(ctx: FormContext, u: MixedVector, v: MixedVector, z: MixedVector) -> np.ndarray:
        """Per-cell contributions of A'(u)(v, z)"""
        out = np.empty(ctx.system.n_cells)
        for cells in ctx.chunks():
            su, sv, sz = ctx.sample(u, cells), ctx.sample(v, cells), ctx.sample(z, cells)
            flux, force, g = ctx.adjoint_flux(su, sz)
            density = (np.einsum("cqab,cqab->cq", flux, sv.grad_u)
                       + np.einsum("cqa,cqa->cq", force, sv.u) + g * sv.p)
            out[cells] = np.sum(ctx.jxw[cells] * density, axis=1)
        return out

    @staticmethod
    def linearized_value(ctx: FormContext, u: MixedVector, v: MixedVector, z: MixedVector) -> float:
        return float(np.sum(FormsService.cell_linearized_values(ctx, u, v, z)))

    @staticmethod
    def assemble_residual(ctx: FormContext, u: MixedVector) -> np.ndarray:
        """A(u)(phi_i) for every basis function, no constraints applied"""
        def chunks():
            for cells in ctx.chunks():
                flux, force, g = ctx.primal_flux(ctx.sample(u, cells))
                yield cells, ctx.test_with_basis(cells, flux, force, g)
        return LinalgService.assemble_vector(ctx.system, chunks())

    @staticmethod
    def residual(ctx: FormContext, u: MixedVector, out: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Condensed residual: A(u)(phi_i) on the constrained test space, zero on constrained rows.

        Args:
            ctx: Form context of u's system
            u: Current iterate (constraints applied)
            out: Optional array to write into

        Returns:
            The residual vector
        """
        r = ctx.system.constraints.condense_vector(FormsService.assemble_residual(ctx, u))
        if out is not None:
            out[:] = r
            return out
        return r

    @staticmethod
    def _local_jacobian(ctx: FormContext, cells: slice, su: FieldSample) -> np.ndarray:
        w = ctx.jxw[cells]
        gv = ctx.grad_v(cells)
        nu = ctx.nu
        local = np.zeros((w.shape[0], ctx.system.n_local, ctx.system.n_local))
        blocks = (ctx.sx, ctx.sy)
        gg = np.einsum("cq,cqid,cqjd->cij", w, gv, gv)
        if ctx.convection:
            advect = np.einsum("cqd,cqjd->cqj", su.u, gv)
            transport = np.einsum("cq,qi,cqj->cij", w, ctx.phi, advect)
        for c, row in enumerate(blocks):
            for e, col in enumerate(blocks):
                blk = nu * np.einsum("cq,cqi,cqj->cij", w, gv[..., e], gv[..., c])
                if c == e:
                    blk += nu * gg
                if ctx.convection:
                    blk += np.einsum("cq,qi,qj->cij", w * su.grad_u[:, :, c, e], ctx.phi, ctx.phi)
                    if c == e:
                        blk += transport
                local[:, row, col] = blk
            local[:, row, ctx.sp] = np.einsum("cq,cqi,qj->cij", w, gv[..., c], ctx.psi)
            local[:, ctx.sp, row] = -np.einsum("cq,qi,cqj->cij", w, ctx.psi, gv[..., c])
        return local

    @staticmethod
    def assemble_jacobian(ctx: FormContext, u: MixedVector) -> sparse.csr_matrix:
        """A'(u)(phi_j, phi_i) at row i, column j, no constraints applied"""
        def chunks():
            for cells in ctx.chunks():
                yield cells, FormsService._local_jacobian(ctx, cells, ctx.sample(u, cells))
        return LinalgService.assemble_matrix(ctx.system, chunks())

    @staticmethod
    def jacobian(ctx: FormContext, u: MixedVector) -> sparse.csr_matrix:
        """Condensed Jacobian P^T A' P with unit rows for constrained dofs"""
        return ctx.system.constraints.condense_matrix(FormsService.assemble_jacobian(ctx, u))

    @staticmethod
    def second_derivative(ctx: FormContext, e1: MixedVector, e2: MixedVector,
                          w: Optional[MixedVector] = None):
        """
        A''(e1, e2, w) = ((e1 . grad) e2 + (e2 . grad) e1, w_u), independent of the
        linearisation point. Returns a scalar for a given w, otherwise the vector
        over all basis functions. Zero without convection.
        """
        if e1.system is not e2.system:
            raise ValueError("second derivative needs both directions on the same system")
        if w is None:
            if not ctx.convection:
                return np.zeros(ctx.system.n_dofs)

            def chunks():
                for cells in ctx.chunks():
                    force = FormsService._cross_convection(ctx.sample(e1, cells), ctx.sample(e2, cells))
                    zero_flux = np.zeros(force.shape[:2] + (2, 2))
                    yield cells, ctx.test_with_basis(cells, zero_flux, force, np.zeros(force.shape[:2]))
            return LinalgService.assemble_vector(ctx.system, chunks())
        return float(np.sum(FormsService.cell_second_derivative_values(ctx, e1, e2, w)))

    @staticmethod
    def cell_second_derivative_values(ctx: FormContext, e1: MixedVector, e2: MixedVector,
                                      w: MixedVector) -> np.ndarray:
        out = np.zeros(ctx.system.n_cells)
        if not ctx.convection:
            return out
        for cells in ctx.chunks():
            force = FormsService._cross_convection(ctx.sample(e1, cells), ctx.sample(e2, cells))
            density = np.einsum("cqa,cqa->cq", force, ctx.sample(w, cells).u)
            out[cells] = np.sum(ctx.jxw[cells] * density, axis=1)
        return out

    @staticmethod
    def _cross_convection(s1: FieldSample, s2: FieldSample) -> np.ndarray:
        return (np.einsum("cqd,cqad->cqa", s1.u, s2.grad_u)
                + np.einsum("cqd,cqad->cqa", s2.u, s1.grad_u))

    @staticmethod
    def third_derivative(ctx: FormContext, *directions: MixedVector) -> float:
        """A''' vanishes identically: the form is quadratic in u"""
        return 0.0

    # ------------------------------------------------------------------
    # Newton
    # ------------------------------------------------------------------
    @staticmethod
    def newton_solve(
        ctx: FormContext,
        u0: MixedVector,
        controls: Optional[NewtonControls] = None,
        weight: Optional[MixedVector] = None,
        eta: Optional[float] = None,
    ) -> Tuple[MixedVector, NewtonReport]:
        """
        Damped Newton iteration on the condensed residual.

        Stops when ||r|| <= abs_tol, or, with a goal weight z and an estimate
        eta, when |rho(u)(z)| <= balance_fraction * |eta|.

        Args:
            ctx: Form context
            u0: Initial iterate (constraints are re-applied)
            controls: Tolerances and damping schedule
            weight: Adjoint-like weight z for the balanced stop
            eta: Current discretisation error estimate

        Returns:
            (solution, report); the report's first entry is the initial iterate

        Raises:
            NewtonError: iteration cap exceeded, non-finite residual, or no damped
                step decreasing the residual
        """
        controls = controls or NewtonControls()
        constraints = ctx.system.constraints
        u = u0.distribute()
        r = FormsService.residual(ctx, u)
        norm = float(np.linalg.norm(r))
        report = NewtonReport()

        def log_step(iteration: int, damping: float) -> bool:
            weighted = None
            if weight is not None:
                weighted = -float(np.dot(r, weight.values))
            if not math.isfinite(norm):
                raise NewtonError(f"non-finite residual at Newton iteration {iteration}")
            report.steps.append(NewtonStep(iteration=iteration, residual=norm, damping=damping, weighted=weighted))
            logger.info(
                f"newton it={iteration} residual={norm:.6e} damping={damping:.6f} "
                f"weighted={weighted if weighted is not None else math.nan:.6e}"
            )
            if norm <= controls.abs_tol:
                return True
            return (weighted is not None and eta is not None
                    and abs(weighted) <= controls.balance_fraction * abs(eta))

        done = log_step(0, 1.0)
        iteration = 0
        while not done:
            if iteration >= controls.max_iter:
                raise NewtonError(
                    f"Newton did not converge in {controls.max_iter} iterations (residual {norm:.3e})"
                )
            iteration += 1
            delta, _ = LinalgService.solve_direct(FormsService.jacobian(ctx, u), -r)
            delta = constraints.distribute(delta, homogeneous=True)
            for k in range(controls.max_halvings + 1):
                damping = 2.0 ** (-k)
                trial = MixedVector(ctx.system, u.values + damping * delta)
                r_trial = FormsService.residual(ctx, trial)
                norm_trial = float(np.linalg.norm(r_trial))
                if norm_trial < norm:
                    break
            else:
                raise NewtonError(
                    f"no damping factor down to 2^-{controls.max_halvings} decreased the residual "
                    f"{norm:.3e} at Newton iteration {iteration}"
                )
            u, r, norm = trial, r_trial, norm_trial
            done = log_step(iteration, damping)
        report.converged = True
        return u, report


# Global instance
forms_service = FormsService()


def residual(ctx: FormContext, u: MixedVector, out: Optional[np.ndarray] = None) -> np.ndarray:
    return FormsService.residual(ctx, u, out)


def jacobian(ctx: FormContext, u: MixedVector) -> sparse.csr_matrix:
    return FormsService.jacobian(ctx, u)


def second_derivative(ctx: FormContext, e1: MixedVector, e2: MixedVector, w: Optional[MixedVector] = None):
    return FormsService.second_derivative(ctx, e1, e2, w)


def newton_solve(ctx: FormContext, u0: MixedVector, controls: Optional[NewtonControls] = None,
                 weight: Optional[MixedVector] = None, eta: Optional[float] = None):
    return FormsService.newton_solve(ctx, u0, controls, weight, eta)
