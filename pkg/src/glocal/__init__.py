"""Global-local contrastive training on paired images and text reports.

Training aligns two image projections (global/local) with report- and
sentence-level text projections; inference scores each class by comparing
an image against averaged positive and negative prompt embeddings.
"""

from glocal.autodiff import Tensor, Parameter, check_gradient, no_grad
from glocal.config import RunConfig
from glocal.estimator import GlobalLocalClassifier

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Parameter",
    "check_gradient",
    "no_grad",
    "RunConfig",
    "GlobalLocalClassifier",
    "__version__",
]
