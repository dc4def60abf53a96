import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # App Settings
    APP_NAME = os.getenv("APP_NAME", "TrustCell")
    APP_VERSION = os.getenv("APP_VERSION", "1.0.0")
    LOG_LEVEL = os.getenv("HOMOG_LOG_LEVEL", "INFO").upper()

    # Workers for ensemble runs
    THREADS = max(1, int(os.getenv("HOMOG_THREADS", str(os.cpu_count() or 1))))

    # Output
    OUTPUT_DIR = os.getenv("HOMOG_OUTPUT_DIR", "runs")
    DATABASE_PATH = os.getenv("HOMOG_DATABASE_PATH", "data/runs.db")

    # Krylov defaults
    CG_RESET_THRESHOLD = 0.2
    CG_RELATIVE_TOLERANCE = 1e-8

    # Trust region defaults
    RADIUS_SHRINK_TRIGGER = 0.25
    RADIUS_SHRINK_FACTOR = 0.25
    RADIUS_EXPAND_TRIGGER = 0.75
    RADIUS_EXPAND_FACTOR = 2.0
    STAGNATION_LIMIT = 50

    # Damage
    DAMAGE_CEILING = 1.0 - 1e-9

    # Plotting
    SVG_HASH_SALT = "trustcell"
