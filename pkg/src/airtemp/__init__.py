"""Gap-filled surface temperature and near-surface air temperature with calibrated intervals."""
from .atc import AtcParamField, atc_eval, atc_eval_stack
from .config import AirConfig, RunConfig, TrainConfig
from .errors import AirTempError
from .grid import GridStack
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["AirConfig", "AirTempError", "AtcParamField", "BACKEND", "GridStack", "RunConfig", "TrainConfig",
           "atc_eval", "atc_eval_stack", "__version__"]
