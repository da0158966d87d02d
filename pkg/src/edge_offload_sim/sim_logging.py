"""Console and logger shared by the simulator."""

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

# Data goes to files; everything shown to the operator goes to stderr.
console_out = Console(stderr=True)

logging.basicConfig(
    level=os.environ.get("EDGE_OFFLOAD_LOG_LEVEL", "WARNING").upper(),
    format="%(message)s",
    datefmt="[%X]",
    handlers=[RichHandler(console=console_out, rich_tracebacks=True, show_path=False)],
)

log = logging.getLogger("edge_offload_sim")
