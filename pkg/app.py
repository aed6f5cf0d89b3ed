"""
Main entry point for B-PL-PINN experiments.

    python app.py run --system convection --beta 30 --method bayes-pl --desk-scale
    python app.py run --config runs/convection_beta30_bayes-pl/effective_config.env
    python app.py suite --preset reaction --desk-scale --jobs 2
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
