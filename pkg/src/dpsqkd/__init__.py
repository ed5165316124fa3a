"""Multi-user differential-phase-shift QKD over a passive optical tree
network: discrete-event simulation plus the classical distillation chain
(sifting, CASCADE reconciliation, secure-rate accounting)."""

__version__ = "0.1.0"

from . import (bitsources, config, errors, kernels, network, optics, outputs,
               postproc, schedule, simcore, units)

__all__ = ["bitsources", "config", "errors", "kernels", "network", "optics",
           "outputs", "postproc", "schedule", "simcore", "units",
           "__version__"]
