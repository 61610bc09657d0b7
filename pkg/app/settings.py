import os
from pathlib import Path

from dotenv import load_dotenv

# Pick up a local .env when present; real environment variables win
load_dotenv(override=False)

project_root = Path(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

LOG_LEVEL = os.getenv("POLCOMP_LOG_LEVEL", "INFO").upper()
LOG_DIR = Path(os.getenv("POLCOMP_LOG_DIR", str(project_root / "logs")))
LOG_TO_FILE = os.getenv("POLCOMP_LOG_TO_FILE", "false").lower() in {"1", "true", "yes"}

# Default output prefix for CLI runs when neither the config nor --out gives one
DEFAULT_OUTPUT_PREFIX = os.getenv("POLCOMP_OUTPUT_PREFIX", "runs/run")
