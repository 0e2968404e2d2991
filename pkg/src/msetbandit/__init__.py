"""m-set semi-bandits: FTPL with Frechet(2) perturbations and geometric resampling.

Submodules: :mod:`core` (the learner), :mod:`phi` (selection-probability
oracle and lemma witnesses), :mod:`environments`, :mod:`baselines`,
:mod:`harness` (experiments), :mod:`verify`, :mod:`plotting` and :mod:`cli`.
"""

from .core import ActionSet, FtplState, ftpl_round, geometric_resample, learning_rate
from .core import sample_frechet, select_action
from .exceptions import ConfigError, DomainError, QuadratureError
from .quadrature import QuadratureResult

__version__ = "0.1.0"

__all__ = [
    "ActionSet", "FtplState", "ftpl_round", "geometric_resample", "learning_rate",
    "sample_frechet", "select_action", "ConfigError", "DomainError", "QuadratureError",
    "QuadratureResult",
]
