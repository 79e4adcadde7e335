# ricsim defaults and paths
from pathlib import Path

PACKAGE_DIR = Path(__file__).resolve().parent
REPO_DIR = PACKAGE_DIR.parent
SCHEMA_DIR = REPO_DIR / "docs" / "schemas"
SCENARIO_DIR = REPO_DIR / "data" / "scenarios"
POLICY_CORPUS_DIR = REPO_DIR / "data" / "policies"
DEFAULT_OUTPUT_DIR = Path("out")

# Simulation clock
DEFAULT_TICK_S = 0.02          # SSB cadence
TIME_RESOLUTION_DIGITS = 9     # event times are rounded to 1 ns

# Timing advance: step = c * 16 * 64 * Tc / 2^(mu+1), Tc = 1 / (480000 * 4096) s
SPEED_OF_LIGHT_MPS = 299_792_458.0
TA_BASE_STEP_M = 78.125
SUPPORTED_SCS_KHZ = (15, 30, 60, 120, 240)

# Localization error standard deviations per axis (meters)
LOCALIZATION_SIGMA_M = {
    "PERFECT": 0.0,
    "RTK": 0.01,
    "DGPS": 1.0,
    "GPS": 6.0,
}

# RAN
DAY_S = 86400.0
DEFAULT_PRB_COUNT = 100
DEFAULT_BLACKLIST_TTL_S = 300.0

# SSD-xApp
DEFAULT_SSD_WINDOW_S = 300.0
DEFAULT_SSD_BUCKET_S = 3600.0
DEFAULT_STD_FLOOR = 0.5
DEFAULT_DBSCAN_EPS = 3.0
DEFAULT_DBSCAN_MIN_PTS = 4
DEFAULT_K_SIGMA = 3.0

# BMM-xApp
DEFAULT_REM_CELL_M = 5.0
DEFAULT_HORIZON_TICKS = 25
DEFAULT_MARGIN_DB = 3.0
DEFAULT_FAILURE_THRESHOLD_DBM = -100.0
DEFAULT_N_CONSECUTIVE = 3

# QRA-xApp
PREFER_X_WEIGHT = 5

# Arbitration order when a scenario gives none
DEFAULT_XAPP_PRIORITY = ["bmm", "ts", "qra", "ssd"]
