"""High-accuracy list-decodable mean estimation for identity-covariance Gaussians.

Subpackages:

* :mod:`listmean.tensors` -- symmetric tensors and Hermite polynomial machinery
* :mod:`listmean.filtering` -- moment-filter subspace learning
* :mod:`listmean.search` -- grid search for moment-matching candidate means
* :mod:`listmean.pipeline` -- end-to-end estimator and semi-verified tournament
* :mod:`listmean.oracle` -- Gaussian samplers and Monte-Carlo geometry verifiers
* :mod:`listmean.datasets` -- synthetic data generation, adversaries, file I/O
* :mod:`listmean.cli` -- command-line interface
"""

from .backend import backend_name, get_backend
from .filtering import Dataset, FilterParams, Subspace, learn_subspace
from .pipeline import PipelineConfig, TournamentInput, estimate, tournament
from .search import CandidateList, SearchParams, search

__all__ = [
    "CandidateList",
    "Dataset",
    "FilterParams",
    "PipelineConfig",
    "SearchParams",
    "Subspace",
    "TournamentInput",
    "backend_name",
    "estimate",
    "get_backend",
    "learn_subspace",
    "search",
    "tournament",
]
__version__ = "0.1.0"
