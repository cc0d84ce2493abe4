import contextlib
import json

try:
    from ._version import __version__
except ImportError:
    __version__ = "unknown"


class Config:
    def __init__(
        self,
        probability_tol: float = 1e-12,
        degeneracy_tol: float = 1e-12,
        enumeration_budget: int = 10**7,
        tail_tolerance: float = 1e-10,
        fixed_point_tol: float = 1e-10,
        fixed_point_max_iter: int = 10_000,
        contraction_window: int = 10,
        randomized_horizon_success: float = 0.2,
        build_version: str = __version__,
    ):
        """
        klsens runtime configuration

        Parameters
        ----------
        probability_tol : float
            Absolute tolerance on the total mass of a probability vector. Vectors
            within tolerance are renormalized, vectors outside it are rejected.
        degeneracy_tol : float
            Variances at or below this value are treated as degenerate.
        enumeration_budget : int
            Largest number of product-space states (or dynamic-programming
            state-steps) an exact computation may visit.
        tail_tolerance : float
            Largest truncation tail bound accepted by the exact random-horizon
            computations when no truncation horizon is given.
        fixed_point_tol : float
            L1 residual at which fixed-point iteration stops.
        fixed_point_max_iter : int
            Iteration cap of the fixed-point solver.
        contraction_window : int
            Number of consecutive non-decreasing residuals that signal a
            failure to contract.
        randomized_horizon_success : float
            Success probability of the default geometric auxiliary time used by
            the randomized-horizon estimator.
        """
        self.build_version = build_version
        self.probability_tol = probability_tol
        self.degeneracy_tol = degeneracy_tol
        self.enumeration_budget = enumeration_budget
        self.tail_tolerance = tail_tolerance
        self.fixed_point_tol = fixed_point_tol
        self.fixed_point_max_iter = fixed_point_max_iter
        self.contraction_window = contraction_window
        self.randomized_horizon_success = randomized_horizon_success

        return

    def to_json(self, out_file):
        """
        Save Config as .json.

        Parameters
        ----------
        out_file : str
            Desired path and name of file to which to save config.
        """
        with open(out_file, "w", encoding="utf-8") as file:
            json.dump(self.__dict__, file, ensure_ascii=False, indent=4)
        return

    @classmethod
    def from_json(cls, in_file: str) -> "Config":
        """
        Load Config from .json.

        Parameters
        ----------
        in_file : str
            Desired path and name of file from which to load config.
        """
        with open(in_file, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(**data)

    def replace(self, **overrides) -> "Config":
        data = dict(self.__dict__)
        data.update(overrides)
        return type(self)(**data)


DefaultConfig = Config()


@contextlib.contextmanager
def overrides(**values):
    """Temporarily change fields of DefaultConfig in this process."""
    unknown = set(values) - set(DefaultConfig.__dict__)
    if unknown:
        raise KeyError(f"unknown config fields {sorted(unknown)}")
    saved = {key: getattr(DefaultConfig, key) for key in values}
    try:
        for key, value in values.items():
            setattr(DefaultConfig, key, value)
        yield DefaultConfig
    finally:
        for key, value in saved.items():
            setattr(DefaultConfig, key, value)
