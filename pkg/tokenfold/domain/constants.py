"""
Ideal backbone geometry.

Bond lengths in Å, angles in degrees. Bump ``IDEAL_GEOMETRY_VERSION`` whenever a
value changes; model containers record it and refuse to load a mismatch.
"""

import numpy as np

IDEAL_GEOMETRY_VERSION = 1

N_CA_LENGTH = 1.458
CA_C_LENGTH = 1.525
C_N_LENGTH = 1.329

N_CA_C_ANGLE = 111.2
CA_C_N_ANGLE = 116.2
C_N_CA_ANGLE = 121.7

# local frame: Cα at origin, C on +x, N in the xy-plane with y > 0
IDEAL_LOCAL_CA = np.zeros(3)
IDEAL_LOCAL_C = np.array([CA_C_LENGTH, 0.0, 0.0])
IDEAL_LOCAL_N = N_CA_LENGTH * np.array(
    [np.cos(np.deg2rad(N_CA_C_ANGLE)), np.sin(np.deg2rad(N_CA_C_ANGLE)), 0.0]
)

# dihedrals (φ, ψ, ω) for the synthetic fold builder
HELIX_PHI_PSI = (-57.0, -47.0)
STRAND_PHI_PSI = (-119.0, 113.0)
OMEGA_TRANS = 180.0

CA_CA_IDEAL = 3.8
CA_CA_TOLERANCE = 0.4
CLASH_DISTANCE = 3.0

FOLD_CLASSES = {0: "helix-bundle", 1: "sheet", 2: "mixed"}
