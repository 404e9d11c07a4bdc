"""
Entry point for running the testbed as a module.

Usage:
    python -m calora all --config configs/smoke.yaml
    python -m calora list-stages
"""

from .cli import main

if __name__ == "__main__":
    main()
