"""
Reference value service

Reference functionals come from the p-enriched space on the uniformly refined
benchmark mesh and are cached on disk keyed by a hash of everything that
determines them.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from app.models.base import EnrichmentKind
from app.schemas.records import LoopRecord, ReferenceValues
from app.schemas.run import AdaptiveConfig
from app.services.adaptivity_service import AdaptivityService
from app.services.forms_service import FormContext
from app.services.goal_service import GoalService
from app.services.mesh_service import MeshService

logger = logging.getLogger(__name__)


class ReferenceService:
    """Service for computing and caching reference functionals"""

    @staticmethod
    def config_hash(config: AdaptiveConfig, refinements: int) -> str:
        """SHA-256 of the settings that determine the reference values"""
        payload = {
            "domain": config.domain.model_dump(mode="json"),
            "stokes_mode": config.stokes_mode,
            "refinements": refinements,
            "abs_tol": config.newton.abs_tol,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    @staticmethod
    def load_cache(path: Path) -> Dict[str, ReferenceValues]:
        path = Path(path)
        if not path.exists():
            return {}
        with path.open("r", encoding="utf-8") as f:
            raw = json.load(f)
        return {key: ReferenceValues(**value) for key, value in raw.items()}

    @staticmethod
    def save_cache(path: Path, cache: Dict[str, ReferenceValues]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump({key: value.model_dump() for key, value in cache.items()}, f, indent=2, sort_keys=True)

    @staticmethod
    def compute_reference(config: AdaptiveConfig, refinements: int) -> ReferenceValues:
        """
        Solve on [Q4]^2 x Q2 over the benchmark mesh refined uniformly `refinements` times.

        Args:
            config: Domain, Stokes flag and Newton controls
            refinements: Number of uniform refinements

        Returns:
            The reference functionals
        """
        mesh = MeshService.build_benchmark_mesh(config.domain, refinements)
        system = AdaptivityService.enriched_system(mesh, EnrichmentKind.P)
        logger.info(f"Computing reference values on {mesh.n_active_cells} cells, {system.n_dofs} dofs")
        ctx = FormContext(system, spec=config.domain, convection=not config.stokes_mode)
        u, _ = AdaptivityService.solve_primal(ctx, config)
        values = GoalService.evaluate_goals(u)
        return ReferenceValues(
            dp=values.dp,
            drag=values.drag,
            lift=values.lift,
            dofs=system.n_dofs,
            config_hash=ReferenceService.config_hash(config, refinements),
        )

    @staticmethod
    def get_reference(config: AdaptiveConfig, path: Path, refinements: int,
                      compute: bool = True) -> Optional[ReferenceValues]:
        """
        Cached reference values for a configuration, computed on a miss.

        Returns:
            The reference, or None on a miss with compute=False
        """
        key = ReferenceService.config_hash(config, refinements)
        cache = ReferenceService.load_cache(path)
        if key in cache:
            logger.info(f"Using cached reference values ({cache[key].dofs} dofs)")
            return cache[key]
        if not compute:
            return None
        reference = ReferenceService.compute_reference(config, refinements)
        cache[key] = reference
        ReferenceService.save_cache(path, cache)
        return reference

    @staticmethod
    def update_from_records(config: AdaptiveConfig, path: Path, refinements: int,
                            records: List[LoopRecord]) -> bool:
        """
        Replace the cached reference by the finest enriched values of a run
        when that solution has more dofs.

        Returns:
            True when the cache was updated
        """
        if not records:
            return False
        finest = records[-1]
        key = ReferenceService.config_hash(config, refinements)
        cache = ReferenceService.load_cache(path)
        current = cache.get(key)
        if current is not None and current.dofs >= finest.dofs_enriched:
            return False
        cache[key] = ReferenceValues(
            dp=finest.enriched.dp,
            drag=finest.enriched.drag,
            lift=finest.enriched.lift,
            dofs=finest.dofs_enriched,
            config_hash=key,
        )
        ReferenceService.save_cache(path, cache)
        logger.info(f"Reference cache updated from a run with {finest.dofs_enriched} enriched dofs")
        return True


# Global instance
reference_service = ReferenceService()


def get_reference(config: AdaptiveConfig, path: Path, refinements: int,
                  compute: bool = True) -> Optional[ReferenceValues]:
    return ReferenceService.get_reference(config, path, refinements, compute)
