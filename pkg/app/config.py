"""
DWR Navier-Stokes Solver - Configuration Management
"""
from pydantic_settings import BaseSettings
from pydantic import ConfigDict


class Settings(BaseSettings):
    """
    Solver settings loaded from environment variables or a key-value file
    """
    model_config = ConfigDict(
        extra='ignore',  # Ignore extra env vars not in model
        env_file=".env",
        case_sensitive=True
    )

    # ========================================================================
    # APPLICATION
    # ========================================================================
    APP_NAME: str = "DWR Navier-Stokes Benchmark Solver"
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "output"

    # ========================================================================
    # BENCHMARK DOMAIN
    # ========================================================================
    CHANNEL_LENGTH: float = 2.2
    CHANNEL_HEIGHT: float = 0.41
    CYLINDER_CENTER_X: float = 0.2
    CYLINDER_CENTER_Y: float = 0.2
    CYLINDER_RADIUS: float = 0.05
    VISCOSITY: float = 1e-3
    INFLOW_PEAK: float = 0.3

    # ========================================================================
    # MESH
    # ========================================================================
    PRE_REFINEMENTS: int = 0

    # ========================================================================
    # ADAPTIVE LOOP
    # ========================================================================
    ENRICHMENT: str = "p"  # p | h
    GOAL: str = "combined"  # dp | drag | lift | combined
    MARKING_FRACTION: float = 0.3
    MAX_DOFS: int = 100000
    MAX_STEPS: int = 12
    STOKES_MODE: bool = False

    # ========================================================================
    # NEWTON
    # ========================================================================
    NEWTON_ABS_TOL: float = 1e-11
    NEWTON_MAX_ITER: int = 25
    NEWTON_MAX_HALVINGS: int = 6
    BALANCE_FRACTION: float = 1e-2

    # ========================================================================
    # LINEAR ALGEBRA
    # ========================================================================
    MAX_LINEAR_DOFS: int = 400000
    ASSEMBLY_CHUNK_SIZE: int = 512

    # ========================================================================
    # REFERENCE VALUES
    # ========================================================================
    REFERENCE_CACHE: str = ".cache/reference.json"
    REFERENCE_REFINEMENTS: int = 3
    COMPUTE_REFERENCE: bool = False  # compute on a cache miss even without figures

    # ========================================================================
    # REPORTING
    # ========================================================================
    EMIT_VTK: bool = False
    EMIT_FIGURES: bool = False


# Global settings instance
settings = Settings()
