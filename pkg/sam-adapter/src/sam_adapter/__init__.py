"""Export Segment Anything masks into the crackseg interchange format."""
from .export import run_export

__all__ = ["run_export"]
