"""Piecewise-constant transverse-field schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ControlField:
    """Field ``h(t)`` equal to ``segments[k]`` on ``[k T/M, (k+1) T/M)``.

    Times are in units of ``1/J`` and fields in units of ``J``.
    """

    total_time: float
    segments: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.array(self.segments, dtype=float).reshape(-1)
        if h.size < 1:
            raise ValueError("a control field needs at least one segment")
        if not np.all(np.isfinite(h)):
            raise ValueError("control field values must be finite")
        if not (np.isfinite(self.total_time) and self.total_time > 0):
            raise ValueError(f"total_time must be > 0, got {self.total_time}")
        h.setflags(write=False)
        object.__setattr__(self, "segments", h)
        object.__setattr__(self, "total_time", float(self.total_time))

    @classmethod
    def constant(cls, total_time: float, value: float, n_segments: int = 1) -> "ControlField":
        return cls(total_time, np.full(n_segments, float(value)))

    @classmethod
    def zeros(cls, total_time: float, n_segments: int = 1) -> "ControlField":
        return cls.constant(total_time, 0.0, n_segments)

    @property
    def n_segments(self) -> int:
        return self.segments.size

    @property
    def dt(self) -> float:
        return self.total_time / self.n_segments

    def boundaries(self) -> np.ndarray:
        return np.linspace(0.0, self.total_time, self.n_segments + 1)

    def value_at(self, t) -> np.ndarray:
        """Field at time(s) ``t``; the final instant takes the last segment."""
        k = np.floor(np.asarray(t, dtype=float) / self.dt).astype(int)
        return self.segments[np.clip(k, 0, self.n_segments - 1)]

    def refined(self, factor: int) -> "ControlField":
        """Same schedule with every segment split into ``factor`` pieces."""
        return ControlField(self.total_time, np.repeat(self.segments, factor))

    def check_bound(self, h_max: float) -> None:
        if np.any(np.abs(self.segments) > h_max):
            raise ValueError(f"field exceeds |h| <= {h_max}")

    def sample_times(self, substeps: int = 1) -> np.ndarray:
        """Segment boundaries, each segment subdivided into ``substeps``."""
        return np.linspace(0.0, self.total_time, self.n_segments * substeps + 1)
