"""Mixed-dimensional beam-to-solid coupling library.

Embeds geometrically exact (Simo--Reissner) beams into 3D hyperelastic
solids and couples both centerline positions and cross-section rotations
via mortar-type, penalty-regularized constraints.
"""

__version__ = "0.1.0"

from . import so3  # noqa: F401
from . import solid_fem  # noqa: F401
from . import beam_fem  # noqa: F401
from . import solid_triads  # noqa: F401
from . import coupling  # noqa: F401
from . import solver  # noqa: F401
from . import analysis  # noqa: F401
from . import io_cli  # noqa: F401
