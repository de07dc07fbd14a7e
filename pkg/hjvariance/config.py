"""
Application configuration for hjvariance.

Only where runs are written can come from the environment; everything that
changes results lives in the run configuration document.
"""

import os
from typing import Any, Dict

# Output Configuration
OUTPUT_CONFIG = {
    "directory": os.getenv("HJV_OUTPUT_DIR", "runs"),
}

# File Names
FILE_NAMES = {
    "manifest": "manifest.json",
    "log_file": "hjvariance.log",
    "snapshot": "environment.hjvr",
    "edge_snapshot": "edges.hjvr",
    "environment_summary": "environment.json",
    "value_header": "value_table.json",
    "value_data": "value_table.bin",
    "paths": "paths.jsonl",
    "survey": "survey.csv",
    "importance": "importance.json",
    "samples": "samples.csv",
    "curve": "curve.json",
    "plot": "plot.csv",
    "shifted_curve": "shifted_curve.json",
    "talagrand": "talagrand.json",
    "influence_stats": "influence_stats.json",
    "hamiltonian": "hamiltonian.json",
    "fpp_samples": "fpp_samples.csv",
    "fpp_curve": "fpp_curve.json",
    "fpp_trend": "fpp_trend.json",
    "fpp_plot": "fpp_plot.csv",
    "hash_check": "hash_check.json",
}

# Logging Configuration
LOGGING_CONFIG = {
    "level": "INFO",
    "format": "%(asctime)s - %(levelname)s - %(message)s",
    "file_handler": True,
    "console_handler": True,
}

# Runtime Configuration
RUNTIME_CONFIG = {
    "default_jobs": 1,
}

# All configuration combined
CONFIG: Dict[str, Any] = {
    "output": OUTPUT_CONFIG,
    "files": FILE_NAMES,
    "logging": LOGGING_CONFIG,
    "runtime": RUNTIME_CONFIG,
}
