"""Blood-test triage toolkit: data preparation, CART trees, random
forests, SMO-trained soft-margin SVMs, leave-one-out evaluation with grid
search, and a portable JSON model-bundle format for client-side inference."""

from . import cart, dataio, errors, evaluation, families, forest, modelstore, svm

__all__ = [
    "cart",
    "dataio",
    "errors",
    "evaluation",
    "families",
    "forest",
    "modelstore",
    "svm",
]

__version__ = "0.1.0"
