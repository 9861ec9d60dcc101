# logging_setup.py
import logging
from logging import Formatter, StreamHandler


def configure_logging(level: str = "INFO", quiet: bool = False) -> None:
    """One stream handler on the root logger; ``quiet`` forces WARNING."""
    handler = StreamHandler()
    handler.setFormatter(Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.setLevel(logging.WARNING if quiet else getattr(logging, level.upper(), logging.INFO))
    # replace any handlers installed earlier (repeat calls, pytest)
    root.handlers = []
    root.addHandler(handler)
