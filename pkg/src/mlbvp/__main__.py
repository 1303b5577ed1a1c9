"""Module entry point so ``python -m mlbvp`` behaves like the console script."""
from __future__ import annotations

from mlbvp.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
