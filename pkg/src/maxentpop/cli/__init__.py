"""Command-line interface and panel file handling."""

from .data import Dataset, emit_panel, ingest
from .main import main
