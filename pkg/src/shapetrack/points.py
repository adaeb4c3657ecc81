"""Tracked point sets and their per-point status bookkeeping."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .imaging import _freeze
from .palette import LandmarkClass

__all__ = ["Point2", "TrackStatus", "PointSetRole", "PointSet"]


class Point2(NamedTuple):
    x: float
    y: float


class TrackStatus(enum.IntEnum):
    OK = 0
    LOST_OUT_OF_BOUNDS = 1
    LOST_SMALL_EIGEN = 2
    LOST_HIGH_RESIDUAL = 3
    LOST_NOT_CONVERGED = 4

    @property
    def label(self) -> str:
        return _STATUS_LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "TrackStatus":
        try:
            return cls(_STATUS_LABELS.index(label))
        except ValueError:
            raise ValueError(f"unknown track status {label!r}") from None


_STATUS_LABELS = ("Ok", "LostOutOfBounds", "LostSmallEigen", "LostHighResidual", "LostNotConverged")


class PointSetRole(enum.Enum):
    SAMPLED = "sampled"
    TRACKED = "tracked"
    SPLICED = "spliced"


@dataclass(frozen=True)
class PointSet:
    """Ordered sub-pixel points of one landmark class with per-point status.

    The order is the contour traversal order assigned at sampling time and is
    preserved by every downstream operation, so a point's index is its
    identity for as long as the set lives.
    """

    cls: LandmarkClass
    points: np.ndarray  # float64, shape (n, 2), columns x and y
    status: np.ndarray  # int8, shape (n,), TrackStatus values
    role: PointSetRole

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 2)
        st = np.ascontiguousarray(self.status, dtype=np.int8).reshape(-1)
        if len(pts) != len(st):
            raise ValueError(f"points ({len(pts)}) and status ({len(st)}) lengths differ")
        if len(pts) and not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "status", _freeze(st))

    @classmethod
    def fresh(cls, landmark: LandmarkClass, points: np.ndarray, role: PointSetRole) -> "PointSet":
        """A set whose points are all in the Ok state."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(landmark, pts, np.zeros(len(pts), dtype=np.int8), role)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def ok_mask(self) -> np.ndarray:
        return self.status == TrackStatus.OK

    @property
    def ok_count(self) -> int:
        return int(self.ok_mask.sum())

    def with_role(self, role: PointSetRole) -> "PointSet":
        return replace(self, role=role)
