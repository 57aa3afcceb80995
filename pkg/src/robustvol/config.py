"""Configuration for robust portfolio computations."""

import os

from dotenv import load_dotenv

load_dotenv()

# Default directory for CLI outputs when --output is a bare file name
OUTPUT_DIR = os.getenv("ROBUSTVOL_OUTPUT_DIR", ".")

# Fixed RK4 step in years; never larger than 1e-3
ODE_STEP = min(float(os.getenv("ROBUSTVOL_ODE_STEP", "1e-3")), 1e-3)

# Monte Carlo defaults
MC_PATHS = int(os.getenv("ROBUSTVOL_MC_PATHS", "100000"))
MC_DT = float(os.getenv("ROBUSTVOL_MC_DT", str(1 / 500)))
MC_SEED = int(os.getenv("ROBUSTVOL_SEED", "20240531"))

# Thread workers for simulation blocks and sweep cells (1 = serial)
WORKERS = int(os.getenv("ROBUSTVOL_WORKERS", "1"))

LOG_LEVEL = os.getenv("ROBUSTVOL_LOG_LEVEL", "INFO")
