"""Maximum-principle geometry for homogeneous Hormander operators."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .operator_core import OperatorSpec, SpecError, parse_operator_spec, preset, validate_spec  # noqa: E402

__all__ = ["BACKEND", "OperatorSpec", "SpecError", "parse_operator_spec", "preset",
           "validate_spec", "__version__"]
