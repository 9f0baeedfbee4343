"""``python -m palmgrid`` entry point."""

from .cli import main

raise SystemExit(main())
