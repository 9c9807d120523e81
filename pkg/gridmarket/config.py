import os

__version__ = "0.3"

DEBUG = os.getenv("DEBUG", False)

APP_DIR = os.getenv("APP_DIR", os.path.dirname(os.path.realpath(__file__)))
DATA_DIR = os.getenv("GRIDMARKET_DATA_DIR", os.path.join(APP_DIR, "data"))
LOGFILE = os.getenv("GRIDMARKET_LOGFILE", None)
LOG_LEVEL = os.getenv("GRIDMARKET_LOG_LEVEL", "DEBUG" if DEBUG else "WARNING")

SEED = int(os.getenv("GRIDMARKET_SEED", 0))
JOBS = int(os.getenv("GRIDMARKET_JOBS", 1))
VERSION = os.getenv("VERSION", __version__)

# numerical constants shared across modules
EPS = 1e-8  # floor on log-domain quantities (kWh)
TOL_ZERO = 1e-6  # below this a traded quantity is not a trade (kWh)
TOL_ADMM = 1e-6
SIGMA_MARGIN = 1e-6  # keeps discounted prices strictly positive when alpha == 1

BUILTIN_SCENARIOS = ["tight", "unbalanced_tight", "loose"]


def tol_eq(*magnitudes):
    """Equality tolerance scaled to the quantities being reconciled."""
    return 1e-9 * max(max(magnitudes, default=1.0), 1.0)
