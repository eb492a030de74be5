"""Ellipsoidal forecasting with a coupling encoder and per-patch SPD transport,
synthetic shock benchmarks and metrics."""

__version__ = "0.1.0"

from fern.model import Fern, FernConfig, SPDFactors  # noqa: E402
from fern.training import TrainConfig, train  # noqa: E402

__all__ = ["Fern", "FernConfig", "SPDFactors", "TrainConfig", "train", "__version__"]
