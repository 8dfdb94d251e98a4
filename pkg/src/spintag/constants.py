"""Physical constants used across the package."""

# Bohr magneton over Planck constant, in GHz per tesla (CODATA).
MU_B_OVER_H_GHZ_PER_T = 13.996245

MU_B_OVER_H_HZ_PER_T = MU_B_OVER_H_GHZ_PER_T * 1e9

# Default zero-field optical transition frequency (Hz).
NU0_DEFAULT_HZ = 226.148e12

# Speed of light (m/s), for nm <-> Hz conversions in configs.
C_M_PER_S = 299_792_458.0

GHZ = 1e9
