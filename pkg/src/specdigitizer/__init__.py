"""Digitize line plots of spectra: axis alignment, tick calibration and flow-based line tracing."""

from .axes import AxisParams, BBox, refine_box
from .errors import DigitizerError
from .pipeline import ExtractionResult, PipelineConfig, extract_image
from .raster import RasterImage
from .trace import TraceParams, trace_lines

__all__ = [
    "AxisParams", "BBox", "DigitizerError", "ExtractionResult", "PipelineConfig",
    "RasterImage", "TraceParams", "extract_image", "refine_box", "trace_lines",
]
__version__ = "0.1.0"
