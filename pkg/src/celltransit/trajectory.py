"""Transit trajectories: time series of centroid position, shape, and speed.

A trajectory is the common currency between the simulator and the feature
extraction code.  Externally tracked transits can be ingested from CSV
(columns ``t,cx,cy,a,b``; microseconds and micrometers) and yield the same
derived features as simulated ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from celltransit.errors import DataError, InsufficientDataError

TRAJECTORY_CSV_HEADER = ["t", "cx", "cy", "a", "b"]


@dataclass
class Trajectory:
    """Ordered samples of one cell transit.

    All arrays share length n.  Times are in microseconds, lengths in
    micrometers, speeds in um/us.  ``di`` is (a-b)/(a+b) per sample.
    ``complete`` is False for transits cut off by the step budget.
    """

    t: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    a: np.ndarray
    b: np.ndarray
    di: np.ndarray
    speed: np.ndarray
    entry_x: float | None = None
    exit_x: float | None = None
    complete: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("cx", "cy", "a", "b", "di", "speed"):
            if len(getattr(self, name)) != n:
                raise DataError(f"trajectory column '{name}' has length "
                                f"{len(getattr(self, name))}, expected {n}")
        if n >= 2 and not np.all(np.diff(self.t) > 0):
            raise DataError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    # -- derived features ------------------------------------------------

    def di_max(self) -> float:
        return float(np.max(self.di))

    def transition_time(self) -> float:
        """Time for the centroid to travel from the entry to the exit plane.

        Crossing times are linearly interpolated between samples.  Requires
        entry_x/exit_x to be set (the simulator sets them from the channel
        geometry); ingested trajectories fall back to total duration.
        """
        if self.entry_x is None or self.exit_x is None:
            return float(self.t[-1] - self.t[0])
        t_in = self._crossing_time(self.entry_x)
        t_out = self._crossing_time(self.exit_x)
        if t_in is None or t_out is None:
            raise DataError("centroid never crossed the constriction planes")
        return t_out - t_in

    def v_max(self) -> float:
        """Maximum centroid speed inside the constriction.

        Without entry/exit planes, the maximum over the whole trajectory.
        """
        if self.entry_x is None or self.exit_x is None:
            return float(np.max(self.speed))
        inside = (self.cx >= self.entry_x) & (self.cx <= self.exit_x)
        if not np.any(inside):
            raise DataError("no samples inside the constriction")
        return float(np.max(self.speed[inside]))

    def di_rate(self) -> float:
        """Mean absolute rate of change of DI over time (1/us).

        Both the deformation and the recovery phase contribute, so the
        value does not cancel for symmetric deform/recover cycles.
        """
        if len(self) < 2:
            raise InsufficientDataError(
                "deformation-index rate needs at least 2 samples")
        dt = np.diff(self.t)
        ddi = np.diff(self.di)
        return float(np.mean(np.abs(ddi / dt)))

    def _crossing_time(self, x_plane: float) -> float | None:
        cx = self.cx
        for i in range(len(cx) - 1):
            if cx[i] < x_plane <= cx[i + 1]:
                frac = (x_plane - cx[i]) / (cx[i + 1] - cx[i])
                return float(self.t[i] + frac * (self.t[i + 1] - self.t[i]))
        if len(cx) and cx[0] >= x_plane:
            return float(self.t[0])
        return None

    # -- I/O ---------------------------------------------------------------

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_CSV_HEADER + ["di", "speed"])
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in
                            (self.t[i], self.cx[i], self.cy[i],
                             self.a[i], self.b[i], self.di[i], self.speed[i])])


def read_trajectory_csv(path) -> Trajectory:
    """Read an externally tracked trajectory (``t,cx,cy,a,b`` header).

    DI is recomputed from the axes; speed from centroid differences
    (forward differences, first value repeated).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty trajectory file")
    header = [h.strip() for h in rows[0]]
    if header[:5] != TRAJECTORY_CSV_HEADER:
        raise DataError(f"{path}: expected header {TRAJECTORY_CSV_HEADER}, "
                        f"got {header[:5]}")
    data = np.array([[float(v) for v in row[:5]] for row in rows[1:]])
    if data.size == 0:
        raise DataError(f"{path}: no samples")
    t, cx, cy, a, b = data.T
    if np.any(a <= 0) or np.any(b < 0) or np.any(b > a):
        raise DataError(f"{path}: ellipse axes must satisfy a >= b >= 0, a > 0")
    di = (a - b) / (a + b)
    if len(t) >= 2:
        dt = np.diff(t)
        ds = np.hypot(np.diff(cx), np.diff(cy))
        speed = np.concatenate([[ds[0] / dt[0]], ds / dt])
    else:
        speed = np.zeros_like(t)
    return Trajectory(t=t, cx=cx, cy=cy, a=a, b=b, di=di, speed=speed)
