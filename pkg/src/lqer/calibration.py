"""Activation calibration: per-channel magnitudes and the diagonal scale S.

Each calibration sample is a ``tokens x channels`` matrix. The channel
magnitude of a sample is the mean absolute value over its tokens; the profile
keeps the maximum of those means across samples, then normalises by the
geometric mean of the smallest and largest channel magnitude.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, CalibrationError, ShapeError
from .linalg import as_matrix

DEAD_FLOOR = 1e-8


def _channel_means(x: np.ndarray) -> np.ndarray:
    # rows are summed in order, so this matches a plain per-token loop exactly
    return np.abs(x).sum(axis=0) / x.shape[0]


class ChannelProfiler:
    """Streaming form of :func:`profile_channels`.

    >>> p = ChannelProfiler()
    >>> p.update([[1.0, -3.0], [2.0, 1.0]])
    >>> p.finalize().tolist()
    [1.5, 2.0]
    """

    def __init__(self):
        self.a_bar: np.ndarray | None = None
        self.sample_count = 0

    @property
    def channels(self) -> int | None:
        return None if self.a_bar is None else self.a_bar.size

    def update(self, sample) -> None:
        x = as_matrix(sample)
        means = _channel_means(x)
        if self.a_bar is None:
            self.a_bar = means
        elif means.size != self.a_bar.size:
            raise ArgumentError(f"sample has {means.size} channels, expected {self.a_bar.size}")
        else:
            self.a_bar = np.maximum(self.a_bar, means)
        self.sample_count += 1

    def merge(self, other: "ChannelProfiler") -> "ChannelProfiler":
        out = ChannelProfiler()
        if self.a_bar is None or other.a_bar is None:
            src = self if other.a_bar is None else other
            out.a_bar = None if src.a_bar is None else src.a_bar.copy()
        else:
            if self.a_bar.size != other.a_bar.size:
                raise ArgumentError("cannot merge profilers with different channel counts")
            out.a_bar = np.maximum(self.a_bar, other.a_bar)
        out.sample_count = self.sample_count + other.sample_count
        return out

    def finalize(self) -> np.ndarray:
        if self.a_bar is None:
            raise ArgumentError("no calibration samples were provided")
        return self.a_bar.copy()


def profile_channels(samples) -> np.ndarray:
    """Max over samples of the per-sample mean absolute channel magnitude."""
    prof = ChannelProfiler()
    for x in samples:
        prof.update(x)
    return prof.finalize()


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    a_bar: np.ndarray
    s_diag: np.ndarray
    sample_count: int = 0
    dead_channel_policy: str = "error"
    floored_channels: tuple[int, ...] = field(default=())

    @property
    def channels(self) -> int:
        return self.s_diag.size

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.a_bar, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.s_diag, dtype="<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CalibrationProfile):
            return NotImplemented
        return (
            np.array_equal(self.a_bar, other.a_bar)
            and np.array_equal(self.s_diag, other.s_diag)
            and self.sample_count == other.sample_count
            and self.dead_channel_policy == other.dead_channel_policy
            and tuple(self.floored_channels) == tuple(other.floored_channels)
        )


def scale_matrix(a_bar, *, sample_count: int = 0, floor_dead: bool = False) -> CalibrationProfile:
    """Build the diagonal of S, ``s_i = a_i / sqrt(min(a) * max(a))``.

    A channel with zero magnitude is rejected with :class:`CalibrationError`
    unless ``floor_dead`` is set, in which case it is raised to
    ``1e-8 * max(a)``.
    """
    a = np.array(a_bar, dtype=np.float64).ravel()
    if a.size == 0:
        raise ArgumentError("empty channel magnitude vector")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("channel magnitudes must be finite")
    if np.any(a < 0):
        j = int(np.flatnonzero(a < 0)[0])
        raise CalibrationError(f"channel {j} has negative magnitude {a[j]!r}", channel=j)
    dead = np.flatnonzero(a <= 0)
    floored: tuple[int, ...] = ()
    if dead.size:
        if not floor_dead or a.max() <= 0:
            j = int(dead[0])
            raise CalibrationError(f"channel {j} is dead (zero mean magnitude)", channel=j)
        a[dead] = DEAD_FLOOR * a.max()
        floored = tuple(int(j) for j in dead)
    s = a / np.sqrt(a.min() * a.max())
    return CalibrationProfile(
        a_bar=a,
        s_diag=s,
        sample_count=sample_count,
        dead_channel_policy="floor" if floor_dead else "error",
        floored_channels=floored,
    )


def calibrate(samples, *, floor_dead: bool = False) -> CalibrationProfile:
    samples = list(samples)
    return scale_matrix(profile_channels(samples), sample_count=len(samples), floor_dead=floor_dead)


def identity_profile(channels: int) -> CalibrationProfile:
    ones = np.ones(channels)
    return CalibrationProfile(a_bar=ones, s_diag=ones.copy())


def apply_scale(e, profile: CalibrationProfile, direction: str = "forward") -> np.ndarray:
    """Scale row ``i`` of ``e`` by ``s_i`` (forward) or ``1/s_i`` (inverse)."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != profile.channels:
        raise ShapeError(f"matrix with shape {e.shape} does not match {profile.channels} channels")
    if direction == "forward":
        return e * profile.s_diag[:, None]
    if direction == "inverse":
        return e / profile.s_diag[:, None]
    raise ArgumentError(f"direction must be 'forward' or 'inverse', got {direction!r}")
