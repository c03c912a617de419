import logging
import os

import numpy as np
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = os.path.dirname(os.path.abspath(__file__))

# --- Environment ---
DEFAULT_SEED = int(os.environ.get("PATCHALIGN_SEED", "0"))
LOG_LEVEL = os.environ.get("PATCHALIGN_LOG_LEVEL", "WARNING").upper()
OUTPUT_DIR = os.environ.get("PATCHALIGN_OUTPUT_DIR", os.path.join(BASE_DIR, "output"))

# --- Numerical tolerances ---
ORTHO_TOL = 1e-9          # ||S_i^T S_i - I||_F accepted for an orthogonal block
AFFINE_RTOL = 1e-9        # relative singular-value cut for affine rank of a view
CRIT_RTOL = 1e-7          # criticality tolerance, scaled by (1 + ||C||_F)
GRAD_RTOL = 1e-10         # default RGD stopping tolerance, scaled by (1 + ||C||_F)
NEAR_SINGULAR_RTOL = 1e-8  # smallest/largest singular value below which a SPEC block rounding is flagged
EIG_FACTOR = 100
MAX_PARTITION_VIEWS = 16

MACHINE_EPS = np.finfo(float).eps


def eig_threshold(size: int, scale: float) -> float:
    """Zero threshold for eigenvalues or singular values of a matrix of the given size."""
    return EIG_FACTOR * max(int(size), 1) * MACHINE_EPS * max(1.0, float(scale))


def numerical_rank(values, size: int) -> int:
    """Count values above eig_threshold; values are singular values or PSD eigenvalues."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0
    tau = eig_threshold(size, np.max(np.abs(values)))
    return int(np.sum(values > tau))


def configure_logging(verbosity: int = 0) -> None:
    """Install one stream handler; each -v lowers the level one step below the env default."""
    level = getattr(logging, LOG_LEVEL, logging.WARNING)
    if verbosity == 1:
        level = min(level, logging.INFO)
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
