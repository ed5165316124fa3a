"""Physical constants and decibel helpers.

Internal convention: SI units everywhere (seconds, meters, Hz, Joules),
losses as positive dB numbers.  Nanoseconds appear only at I/O edges.
"""

import math

SPEED_OF_LIGHT = 299_792_458.0          # m/s
PLANCK_TIMES_C = 1.98645e-25            # J*m, h*c


def db_to_fraction(loss_db: float) -> float:
    """Power transmission fraction for a positive dB loss."""
    return 10.0 ** (-loss_db / 10.0)


def fraction_to_db(fraction: float) -> float:
    """Positive dB loss for a power transmission fraction in (0, 1]."""
    if fraction <= 0.0:
        return math.inf
    return -10.0 * math.log10(fraction)
