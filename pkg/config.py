import os
from dotenv import load_dotenv
load_dotenv()

# Load environment variables from .env file
# Every simulator setting can be overridden with a NONLOCAL_SIM_ prefixed variable;
# command-line flags and --config files take precedence over these values.

# Logging Configuration
LOG_FORMAT = os.getenv("LOG_FORMAT", "%(asctime)s - %(levelname)s - %(name)s - %(message)s")
LOG_FILE = os.getenv("LOG_FILE", "logs/nonlocal_sim.log")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_JSON = os.getenv("LOG_JSON", "false").lower() in ("true", "1", "yes", "on")

# Simulation defaults
ENV_PREFIX = "NONLOCAL_SIM_"
DEFAULT_SEED = 0
DEFAULT_TRIALS = 100_000
DEFAULT_CHUNK_SIZE = 2 ** 16          # runs per seeded chunk in sweeps
DEFAULT_WORKERS = 1
DEFAULT_MAX_REJECTION_ITERATIONS = 10 ** 6
DEFAULT_RANDOM_SETTINGS = 20
DEFAULT_BASELINE_SETTINGS = 50

# Report format
SCHEMA_VERSION = 1

