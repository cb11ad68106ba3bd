"""Console logging through rich."""
import logging

from rich.console import Console
from rich.logging import RichHandler

# Tables and panels go to stdout; log records go to stderr.
console = Console()
err_console = Console(stderr=True)


def setup_logging(level: str = "INFO") -> None:
    """Route the root logger through a RichHandler on stderr."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False, markup=False)],
        force=True,
    )
