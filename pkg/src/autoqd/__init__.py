"""Quality-diversity search with descriptors learned from policy occupancy embeddings."""
from .archive import ArchiveConfig, GridArchive, Occupant, qd_score, rebuild
from .cmaes import cma_ask, cma_init, cma_tell
from .config import RunConfig, load_config
from .descriptor import AffineMap, fit_cwpca, project
from .driver import random_search, run
from .embedding import RffMap, embed_policy, exact_mmd, rff_mmd, sample_rff, theorem1_sweep
from .env import FiniteMdp, PointMass2D, PointMassConfig, rollout, vary_env
from .errors import AutoQDError, ConfigurationError, DomainError, ResourceError
from .policy import Policy, PolicyArchitecture

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "ArchiveConfig", "AutoQDError", "ConfigurationError", "DomainError",
    "FiniteMdp", "GridArchive", "Occupant", "PointMass2D", "PointMassConfig", "Policy",
    "PolicyArchitecture", "ResourceError", "RffMap", "RunConfig", "cma_ask", "cma_init",
    "cma_tell", "embed_policy", "exact_mmd", "fit_cwpca", "load_config", "project",
    "qd_score", "random_search", "rebuild", "rff_mmd", "rollout", "run", "sample_rff",
    "theorem1_sweep", "vary_env",
]
