"""
Entry point for hjvariance runs.

    python main.py solve --config docs/examples/hopf_lax.json --out runs/hopf_lax
"""

import sys

from hjvariance.cli import main


if __name__ == "__main__":
    sys.exit(main())
