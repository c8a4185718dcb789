"""Process-wide settings for the lattice toolkit."""

import os
from dotenv import load_dotenv

load_dotenv()

# Where CLI runs write their artifacts when --out is not given
OUTPUT_DIR = os.getenv("WLDE_OUTPUT_DIR", "data/runs")

# Worker threads for sweeps and comparison tables
THREADS = int(os.getenv("WLDE_THREADS", "1"))

# Upper bound on the memory a stored trajectory may take
MEMORY_BUDGET_BYTES = int(os.getenv("WLDE_MEMORY_BUDGET_MB", "512")) * 2**20

# Upper bound on geometric-mixture terms per site
MIXTURE_TERM_BUDGET = int(os.getenv("WLDE_MIXTURE_TERM_BUDGET", "100000"))

LOG_LEVEL = os.getenv("WLDE_LOG_LEVEL", "INFO")

# Nested config overrides: WLDE__LATTICE__SPACING=0.5 sets lattice.spacing
ENV_OVERRIDE_PREFIX = "WLDE__"

# Reference experiment configs shipped with the repository
CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
