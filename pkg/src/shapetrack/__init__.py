"""Real-time shape tracking toolkit.

Slow, accurate per-class segmentation is refreshed periodically and spliced,
with motion compensation, into a fast pyramidal KLT point tracker.  The hot
tracking kernel is compiled when available; ``backend_name()`` tells you
which implementation is live.
"""

from ._kernels import backend_name
from .imaging import BinaryMask, GrayImage, ImagePyramid, RgbImage
from .klt import FlowVector, TrackerConfig, track_point, track_points
from .palette import LabelMask, LandmarkClass, class_mask, decode_mask, encode_mask
from .pnm import read_pnm, write_pnm
from .points import Point2, PointSet, PointSetRole, TrackStatus
from .sampling import decimate, extract_contour, sample_landmark_points

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "GrayImage",
    "RgbImage",
    "BinaryMask",
    "ImagePyramid",
    "LabelMask",
    "LandmarkClass",
    "decode_mask",
    "encode_mask",
    "class_mask",
    "read_pnm",
    "write_pnm",
    "Point2",
    "PointSet",
    "PointSetRole",
    "TrackStatus",
    "extract_contour",
    "decimate",
    "sample_landmark_points",
    "FlowVector",
    "TrackerConfig",
    "track_point",
    "track_points",
]
