"""Physical constants (CODATA via scipy) and the experiment's fixed numbers."""

import math

from scipy import constants as _c

E_CHARGE = _c.e
M_ELECTRON = _c.m_e
EPS0 = _c.epsilon_0
C_LIGHT = _c.c
HBAR = _c.hbar
H_PLANCK = _c.h
K_B = _c.k
AMU = _c.atomic_mass
RYDBERG_HZ = _c.Rydberg * _c.c

# Rb-87 atomic mass (AME2016), kg
M_RB87 = 86.909180531 * AMU

WAVELENGTH = 820e-9
FOCAL_LENGTH = 16.3e-3
TWEEZER_WAIST = 1.2e-6
TWEEZER_POWER = 2.6e-3
TWEEZER_DEPTH = 1e-3 * K_B
BOB_POWER = 20e-3

# Ground-state polarizability at 820 nm, chosen so that 2.6 mW focused to a
# 1.2 um waist gives a 1 mK deep trap.  C m^2 / V
POLARIZABILITY_820 = (
    2 * EPS0 * C_LIGHT * TWEEZER_DEPTH * math.pi * TWEEZER_WAIST**2 / (2 * TWEEZER_POWER)
)


def ponderomotive_coefficient(wavelength):
    """Energy per unit intensity of a free electron, J / (W m^-2)."""
    omega = 2 * math.pi * C_LIGHT / wavelength
    return E_CHARGE**2 / (2 * EPS0 * C_LIGHT * M_ELECTRON * omega**2)
