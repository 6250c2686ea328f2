"""Allow ``python -m sml`` as an alias for the ``sml`` console script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
