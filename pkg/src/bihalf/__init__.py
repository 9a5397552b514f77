"""Exact bit-ratio binary networks via optimal transport ("bi-half").

Submodules: :mod:`~bihalf.tensor` (numpy substrate), :mod:`~bihalf.quantize`
(binarizers), :mod:`~bihalf.layers`, :mod:`~bihalf.pruning`,
:mod:`~bihalf.train`, :mod:`~bihalf.toy`, :mod:`~bihalf.data` and
:mod:`~bihalf.cli`.
"""

from .quantize import BernoulliPrior, ot_binarize, positive_count, wasserstein_oracle

__all__ = ["BernoulliPrior", "ot_binarize", "positive_count", "wasserstein_oracle"]
__version__ = "0.1.0"
