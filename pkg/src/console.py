# -*- coding: utf-8 -*-
"""Shared rich console and logging setup for the CLI."""
import logging
from typing import List

from rich.console import Console
from rich.logging import RichHandler

__all__: List[str] = ["configure_logging", "make_console"]


def make_console(stderr: bool = False) -> Console:
    """Creates the console used for tables and summaries."""
    return Console(stderr=stderr, highlight=False)


# impure
def configure_logging(verbose: bool = False) -> None:
    """Installs a RichHandler on the root logger. Called once by the CLI."""
    level = logging.DEBUG if verbose else logging.INFO
    handler = RichHandler(
        console=make_console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
    )
    logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)
