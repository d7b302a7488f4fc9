"""Feature-space testbed for counterfactual generative zero-shot classification."""

__version__ = "0.1.0"

from cfzsl.kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
