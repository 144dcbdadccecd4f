"""Run the command-line interface: ``python3 -m emtinit``."""

from .cli import main

main()
