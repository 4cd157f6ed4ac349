import os
from dotenv import load_dotenv

load_dotenv()


class Settings:
    # Execution
    WORKERS = int(os.getenv("DRIFT_WORKERS", "1"))

    # Output locations
    OUTPUT_DIR = os.getenv("DRIFT_OUTPUT_DIR", "runs")
    LEDGER_PATH = os.getenv("DRIFT_LEDGER_PATH", "data/run_ledger.json")

    # Numerical limits
    DIVERGENCE_THRESHOLD = 1e6
    LYAPUNOV_TOLERANCE = 1e-10
    LYAPUNOV_DIRECT_LIMIT = 40
    EXACT_W2_LIMIT = 2048
    CHAIN_BLOCK = 256
    DEFAULT_PROJECTIONS = 128

    # Seed stream reserved for reference clouds
    REFERENCE_STREAM = 2**63 - 1

    # Feature Flags
    DEBUG_MODE = os.getenv("DEBUG_MODE", "false").lower() == "true"
    LOG_LEVEL = "DEBUG" if DEBUG_MODE else os.getenv("LOG_LEVEL", "INFO").upper()

settings = Settings()
