"""`python -m orglab` — the invocation organisms use to execute children."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
