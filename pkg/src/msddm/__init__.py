"""First-passage analysis of multistage drift-diffusion and Ornstein-Uhlenbeck models."""
from .aggregate import *  # noqa: F401,F403
from .core import *  # noqa: F401,F403
from .montecarlo import *  # noqa: F401,F403
from .ou import *  # noqa: F401,F403
from .reward import *  # noqa: F401,F403
from .stages import *  # noqa: F401,F403
from . import aggregate, core, montecarlo, ou, reward, stages

__all__ = (aggregate.__all__ + core.__all__ + montecarlo.__all__ + ou.__all__
           + reward.__all__ + stages.__all__)
__version__ = "0.1.0"
