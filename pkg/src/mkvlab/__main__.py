"""Run the command-line interface: ``python -m mkvlab <subcommand> ...``."""

import sys

from .cli import main

sys.exit(main())
