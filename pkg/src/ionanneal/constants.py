"""Physical constants (CODATA values as shipped with scipy)."""

import math

from scipy import constants as _c

HBAR = _c.hbar
K_B = _c.k
EPSILON_0 = _c.epsilon_0
E_CHARGE = _c.e
AMU = _c.atomic_mass

#: 171Yb+ mass; only enters the physical length scale of the chain.
YB171_MASS = 170.936323 * AMU

TWO_PI = 2.0 * math.pi
