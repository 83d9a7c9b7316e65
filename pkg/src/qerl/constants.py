"""Numerical tolerances and resource caps shared by every module."""

STATE_TOL = 1e-10
UNITARY_TOL = 1e-9
DISENTANGLE_TOL = 1e-10
DISTRIBUTION_TOL = 1e-12

# Largest Hilbert-space dimension held as a dense state vector.
DENSE_DIM_CAP = 2**14
# Density matrices cost dim**2 entries, so their cap is tighter.
DENSITY_DIM_CAP = 2**11

GROWTH_FACTOR = 6 / 5
SEARCH_BUDGET_FACTOR = 10
MAX_FIND_BUDGET_FACTOR = 50
RESTART_CAP = 10**7
