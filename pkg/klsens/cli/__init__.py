from .commands import main  # noqa: F401
from .experiment import EXPERIMENT_SCHEMA, ExperimentConfig  # noqa: F401
