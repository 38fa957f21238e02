"""Deep Ritz solvers for 2-D elliptic problems.

Subpackages cover uniform triangulations (:mod:`ritzfem.mesh`), symmetric
triangle/segment quadrature (:mod:`ritzfem.quadrature`), P1/P2 finite element
assembly with weak boundary penalties (:mod:`ritzfem.fem`), variable
coefficient forms (:mod:`ritzfem.elliptic`), the residual tanh network with
hand-rolled differentiation (:mod:`ritzfem.network`), the three training
backends (:mod:`ritzfem.training`) and the benchmark harness
(:mod:`ritzfem.harness`).
"""

from . import elliptic, fem, harness, mesh, network, quadrature, training

__all__ = ["elliptic", "fem", "harness", "mesh", "network", "quadrature", "training"]
__version__ = "0.1.0"
