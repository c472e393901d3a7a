"""Mechanical-feature math and dataset statistics.

Covers the deformation index, min-max feature scaling, the
deformation-index rate, and the statistics reported for the feature set:
Pearson correlations with permutation p-values, OLS regression slopes,
and per-class summaries.

All functions are pure; permutation tests are deterministic for a fixed
seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from celltransit.errors import (
    ConfigError,
    DegenerateEllipseError,
    InsufficientDataError,
    UndefinedStatisticError,
)
from celltransit.trajectory import Trajectory

FEATURE_NAMES = ("di", "tt", "vmax")
FEATURE_NAMES_DIR = ("di", "tt", "vmax", "dir")


@dataclass(frozen=True)
class EllipseFit:
    """Major/minor axis lengths of a fitted ellipse (um)."""

    a: float
    b: float

    def __post_init__(self):
        if self.a == 0.0 and self.b == 0.0:
            raise DegenerateEllipseError("degenerate ellipse: a = b = 0")
        if not (self.a >= self.b >= 0.0):
            raise ConfigError(f"ellipse axes must satisfy a >= b >= 0, "
                              f"got a={self.a}, b={self.b}")


def deformation_index(e: EllipseFit) -> float:
    """(a - b) / (a + b): 0 for a circle, 1 for a collapsed ellipse."""
    return (e.a - e.b) / (e.a + e.b)


def ellipse_from_points(points: np.ndarray) -> EllipseFit:
    """Fit an ellipse to boundary points via second-moment (covariance) axes.

    For points sampled on an ellipse boundary the covariance eigenvalues
    are (a/2)^2 / 2 per axis, so full axes are 2*sqrt(2*lambda).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ConfigError("need an (n, 2) array with n >= 3 points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    eigvals = np.linalg.eigvalsh(cov)
    lam2, lam1 = max(eigvals[0], 0.0), max(eigvals[1], 0.0)
    return EllipseFit(a=2.0 * np.sqrt(2.0 * lam1), b=2.0 * np.sqrt(2.0 * lam2))


def deformation_index_rate(traj: Trajectory) -> float:
    """Mean |dDI/dt| over consecutive samples (1/us)."""
    return traj.di_rate()


# ---------------------------------------------------------------------------
# feature vectors and scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    """Normalized mechanical features; every present field lies in [0, 1]."""

    di: float
    tt: float
    vmax: float
    dir: float | None = None

    def to_array(self) -> np.ndarray:
        if self.dir is None:
            return np.array([self.di, self.tt, self.vmax])
        return np.array([self.di, self.tt, self.vmax, self.dir])

    @property
    def dim(self) -> int:
        return 3 if self.dir is None else 4


@dataclass
class Scaler:
    """Per-feature min-max scaler.

    Fit on the training partition only and reused verbatim for validation
    and test data to avoid leakage.  Constant features (max == min) map
    to 0.  Out-of-range values at inference time are clamped to [0, 1].
    """

    mins: np.ndarray
    maxs: np.ndarray
    constant: np.ndarray
    fitted_on_training_only: bool = True

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        span = self.maxs - self.mins
        span = np.where(self.constant, 1.0, span)
        out = (x - self.mins) / span
        out[:, self.constant] = 0.0
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "constant": self.constant.tolist(),
            "fitted_on_training_only": self.fitted_on_training_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(mins=np.array(d["mins"], dtype=float),
                   maxs=np.array(d["maxs"], dtype=float),
                   constant=np.array(d["constant"], dtype=bool),
                   fitted_on_training_only=d.get("fitted_on_training_only", True))


def fit_scaler(x: np.ndarray) -> Scaler:
    """Record per-feature min/max over the given (training) rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.size == 0:
        raise ConfigError("cannot fit a scaler on an empty dataset")
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    constant = maxs == mins
    if np.any(constant):
        warnings.warn(f"constant feature(s) at index "
                      f"{np.flatnonzero(constant).tolist()}; "
                      "they normalize to 0", stacklevel=2)
    return Scaler(mins=mins, maxs=maxs, constant=constant)


def apply_scaler(s: Scaler, x: np.ndarray) -> np.ndarray:
    return s.transform(x)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _check_series(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("series must be 1-D and of equal length")
    if len(x) < 3:
        raise InsufficientDataError("need at least 3 samples")
    return x, y


def pearson_correlation(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _check_series(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedStatisticError("correlation undefined: zero variance")
    r = float(np.sum(xc * yc) / (sx * sy))
    return min(1.0, max(-1.0, r))


def permutation_pvalue(x: np.ndarray, y: np.ndarray, n_perm: int = 10_000,
                       seed: int = 0) -> float:
    """Two-sided permutation p-value for the Pearson correlation.

    p = (1 + #{perm : |r_perm| >= |r_obs|}) / (n_perm + 1), with y permuted
    under a generator seeded by ``seed``.
    """
    x, y = _check_series(x, y)
    if n_perm < 100:
        raise ConfigError("n_perm must be at least 100")
    r_obs = abs(pearson_correlation(x, y))
    rng = np.random.default_rng(seed)
    # precompute the pieces of r that survive permutation of y
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(len(y))
        r_perm = abs(np.sum(xc * yc[perm]) / denom)
        if r_perm >= r_obs - 1e-15:
            count += 1
    return (1 + count) / (n_perm + 1)


def regression_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Ordinary least squares slope of y on x and its standard error."""
    x, y = _check_series(x, y)
    xc = x - x.mean()
    sxx = np.sum(xc * xc)
    if sxx == 0.0:
        raise UndefinedStatisticError("slope undefined: zero variance in x")
    slope = float(np.sum(xc * (y - y.mean())) / sxx)
    intercept = y.mean() - slope * x.mean()
    resid = y - (slope * x + intercept)
    sse = float(np.sum(resid * resid))
    n = len(x)
    stderr = float(np.sqrt(max(sse, 0.0) / (n - 2) / sxx))
    return slope, stderr


@dataclass
class ClassSummary:
    label: str
    mean: np.ndarray
    std: np.ndarray
    count: int


def class_summaries(x: np.ndarray, labels) -> list[ClassSummary]:
    """Per-class, per-feature mean and sample standard deviation.

    Single-sample classes report std 0; empty classes are skipped with a
    warning.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels)
    out = []
    for lab in sorted(set(labels.tolist()), key=str):
        rows = x[labels == lab]
        if rows.shape[0] == 0:
            warnings.warn(f"class {lab!r} has no samples; skipped",
                          stacklevel=2)
            continue
        std = (np.zeros(rows.shape[1]) if rows.shape[0] == 1
               else rows.std(axis=0, ddof=1))
        out.append(ClassSummary(label=str(lab), mean=rows.mean(axis=0),
                                std=std, count=rows.shape[0]))
    return out


@dataclass
class PairStats:
    name: str
    feature_x: str
    feature_y: str
    r: float
    p: float
    slope: float
    slope_stderr: float


@dataclass
class CorrelationReport:
    """All unordered feature-pair correlations with p-values and slopes.

    Pairs over (di, tt, vmax) are labeled R1 = (di, tt), R2 = (di, vmax),
    R3 = (tt, vmax).
    """

    pairs: list[PairStats] = field(default_factory=list)

    def matrix_csv_rows(self, feature_names) -> list[list[str]]:
        """Square matrix: r in the lower triangle, p in the upper."""
        k = len(feature_names)
        cells = [["" for _ in range(k + 1)] for _ in range(k + 1)]
        cells[0][0] = "feature"
        for i, name in enumerate(feature_names):
            cells[0][i + 1] = name
            cells[i + 1][0] = name
            cells[i + 1][i + 1] = "1"
        lookup = {(p.feature_x, p.feature_y): p for p in self.pairs}
        for i in range(k):
            for j in range(i + 1, k):
                p = lookup[(feature_names[i], feature_names[j])]
                cells[j + 1][i + 1] = repr(p.r)
                cells[i + 1][j + 1] = repr(p.p)
        return cells


def correlation_report(x: np.ndarray, feature_names=FEATURE_NAMES,
                       n_perm: int = 10_000, seed: int = 0) -> CorrelationReport:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(feature_names):
        raise ConfigError(f"feature matrix has {x.shape[1]} columns, "
                          f"expected {len(feature_names)}")
    pairs = []
    idx = 0
    for i in range(len(feature_names)):
        for j in range(i + 1, len(feature_names)):
            idx += 1
            r = pearson_correlation(x[:, i], x[:, j])
            p = permutation_pvalue(x[:, i], x[:, j], n_perm=n_perm,
                                   seed=seed + idx)
            slope, stderr = regression_fit(x[:, i], x[:, j])
            pairs.append(PairStats(name=f"R{idx}",
                                   feature_x=feature_names[i],
                                   feature_y=feature_names[j],
                                   r=r, p=p, slope=slope, slope_stderr=stderr))
    return CorrelationReport(pairs=pairs)


def trajectory_features(traj: Trajectory, with_dir: bool = False) -> dict:
    """Raw (unnormalized) feature values extracted from one trajectory."""
    out = {
        "di": traj.di_max(),
        "tt": traj.transition_time(),
        "vmax": traj.v_max(),
    }
    if with_dir:
        out["dir"] = traj.di_rate()
    return out
