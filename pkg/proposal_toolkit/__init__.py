"""
Proposal Toolkit

Scale-aware pixel-wise object proposals: small fully-convolutional networks,
multi-scale inference, superpixel refinement and recall/ABO evaluation on
synthetic scenes, driven by YAML run configurations.
"""

__version__ = "1.0.0"

from .main import run_gen, run_train, run_infer, run_eval, run_ablate, validate_run  # noqa: E402
from .config.loader import load_run_config  # noqa: E402
from .config.validator import validate_run_config, is_valid_config  # noqa: E402
from .config.models import RunConfig  # noqa: E402

__all__ = [
    "run_gen",
    "run_train",
    "run_infer",
    "run_eval",
    "run_ablate",
    "validate_run",
    "load_run_config",
    "validate_run_config",
    "is_valid_config",
    "RunConfig",
]
