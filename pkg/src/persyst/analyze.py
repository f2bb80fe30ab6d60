"""Analyses over ``jobs.tsv`` / ``properties.tsv``."""

from __future__ import annotations

import csv
import enum
import io
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from statistics import median as _median
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .presets import MachinePreset
from .properties import PropertyKind
from .quantiles import EmptyInput, interpolated_quantiles
from .store import JobRecord, PropertyStore

__all__ = [
    "NICE_INTERVALS",
    "RuntimeStats",
    "TooShort",
    "IoFailure",
    "runtime_stats",
    "expected_points",
    "display_points",
    "required_interval",
    "cores_to_nodes",
    "Cluster",
    "GridDensityClustering",
    "detect_clusters",
    "Vectorization",
    "VectorizationClassifier",
    "classify_vectorization",
    "detect_tool_failures",
    "spans_sampling_instant",
    "estimate_volume",
    "emit_scatter",
    "scatter_svg",
    "scatter_csv",
]

NICE_INTERVALS = (1, 2, 5, 10, 15, 20, 30, 60, 120, 300, 600, 1800, 3600)


class TooShort(ValueError):
    """The runtime cannot reach the target at one sample per second or slower."""


class IoFailure(OSError):
    pass


# -- runtime statistics and sampling arithmetic -----------------------------

@dataclass(frozen=True)
class RuntimeStats:
    q1: float
    median: float
    mean: float
    q3: float
    n: int


def _runtimes(jobs) -> np.ndarray:
    vals = [j.runtime if isinstance(j, JobRecord) else j for j in jobs]
    return np.asarray(vals, dtype=float)


def runtime_stats(jobs: Iterable[Union[JobRecord, float]]) -> RuntimeStats:
    """Quartiles (same interpolation as the quantile summaries) and mean runtime."""
    x = _runtimes(jobs)
    if x.size == 0:
        raise EmptyInput("no jobs")
    q1, med, q3 = interpolated_quantiles(np.sort(x), (0.25, 0.5, 0.75)).tolist()
    return RuntimeStats(q1, med, math.fsum(x.tolist()) / x.size, q3, int(x.size))


def expected_points(runtime_s: float, interval_s: float) -> float:
    """Expected number of global sampling instants that fall inside a job."""
    if runtime_s < 0 or not interval_s > 0:
        raise ValueError("need runtime >= 0 and interval > 0")
    return runtime_s / interval_s


def display_points(points: float) -> int:
    return int(Decimal(repr(points)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def required_interval(runtime_s: float, target_points: int) -> tuple[float, int]:
    """Sampling interval giving ``target_points`` samples over ``runtime_s``.

    Returns the exact quotient and the largest conventional interval that
    still yields at least the target.
    """
    if not runtime_s > 0 or target_points < 1:
        raise ValueError("need runtime > 0 and target >= 1")
    exact = runtime_s / target_points
    for nice in reversed(NICE_INTERVALS):
        if nice <= exact and runtime_s / nice >= target_points:
            return exact, nice
    raise TooShort(f"{runtime_s} s cannot give {target_points} points at >= 1 s spacing "
                   f"(needs {exact:.3g} s)")


def cores_to_nodes(cores: int, machine: Union[MachinePreset, int]) -> int:
    cpn = machine.cores_per_node if isinstance(machine, MachinePreset) else int(machine)
    if cores < 1 or cpn < 1:
        raise ValueError("cores and cores per node must be positive")
    return -(-int(cores) // cpn)


def estimate_volume(cores: int, metrics: int, bytes_per_value: int = 4,
                    interval_s: float = 600) -> tuple[int, float]:
    """Bytes stored per sampling instant and per day."""
    if min(cores, metrics, bytes_per_value) <= 0 or not interval_s > 0:
        raise ValueError("all volume parameters must be positive")
    per_point = cores * metrics * bytes_per_value
    return per_point, per_point * (86400 / interval_s)


# -- clustering -------------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    centroid_cores: float
    centroid_seconds: float
    job_count: int
    members: tuple[str, ...]


class GridDensityClustering(ClusterMixin, BaseEstimator):
    """Density clustering of (cores, runtime) points on a log-log grid.

    Points are binned on ``(log2 cores, log10 seconds)`` cells of size
    ``cell``. Cells holding at least ``min_density`` points are joined with
    their dense 8-neighbours; each connected group is one cluster. Points in
    sparse cells get label -1.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    centroids_ : ndarray of shape (n_clusters, 2)
        Mean of each cluster in log space, mapped back to (cores, seconds).
    """

    def __init__(self, cell=(0.5, 0.25), min_density=5):
        self.cell = cell
        self.min_density = min_density

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        if X.shape[1] != 2:
            raise ValueError("expected two columns: cores, runtime in seconds")
        if np.any(X <= 0):
            raise ValueError("cores and runtimes must be positive")
        w_cores, w_secs = self.cell
        if not (w_cores > 0 and w_secs > 0):
            raise ValueError("cell widths must be positive")
        logs = np.column_stack([np.log2(X[:, 0]), np.log10(X[:, 1])])
        cells = np.floor(logs / np.array([w_cores, w_secs])).astype(np.int64)
        occupancy: dict[tuple[int, int], list[int]] = {}
        for i, c in enumerate(map(tuple, cells)):
            occupancy.setdefault(c, []).append(i)
        dense = {c for c, members in occupancy.items() if len(members) >= self.min_density}

        groups = []
        seen = set()
        for start in sorted(dense):
            if start in seen:
                continue
            seen.add(start)
            stack, group = [start], []
            while stack:
                c = stack.pop()
                group.append(c)
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        nb = (c[0] + dx, c[1] + dy)
                        if nb in dense and nb not in seen:
                            seen.add(nb)
                            stack.append(nb)
            groups.append(sorted(group))

        labels = np.full(X.shape[0], -1, dtype=int)
        centroids = []
        for k, group in enumerate(sorted(groups)):
            idx = sorted(i for c in group for i in occupancy[c])
            labels[idx] = k
            # fsum keeps the centroid independent of point order
            mean = [math.fsum(logs[idx, d].tolist()) / len(idx) for d in (0, 1)]
            centroids.append((2.0 ** mean[0], 10.0 ** mean[1]))
        self.labels_ = labels
        self.centroids_ = np.asarray(centroids, dtype=float).reshape(-1, 2)
        self.n_clusters_ = len(centroids)
        return self


def detect_clusters(jobs: Sequence[JobRecord], cell=(0.5, 0.25), min_density: int = 5) -> list[Cluster]:
    if not jobs:
        raise EmptyInput("no jobs to cluster")
    X = np.array([[j.cores, j.runtime] for j in jobs], dtype=float)
    est = GridDensityClustering(cell=cell, min_density=min_density).fit(X)
    out = []
    for k, (c, s) in enumerate(est.centroids_):
        members = tuple(sorted(j.job_id for j, lab in zip(jobs, est.labels_) if lab == k))
        out.append(Cluster(float(c), float(s), len(members), members))
    return sorted(out, key=lambda cl: (cl.centroid_cores, cl.centroid_seconds))


# -- vectorization ----------------------------------------------------------

class Vectorization(enum.Enum):
    VECTORIZED = "VECTORIZED"
    SCALAR = "SCALAR"
    INDETERMINATE = "INDETERMINATE"


class VectorizationClassifier(ClassifierMixin, BaseEstimator):
    """Threshold labelling of a job's median AVX fraction.

    Stateless apart from validating the thresholds; ``fit`` exists so the
    classifier slots into pipelines and model selection. NaN means the job
    had no data and maps to INDETERMINATE.
    """

    def __init__(self, hi=0.5, lo=0.05):
        self.hi = hi
        self.lo = lo

    def fit(self, X=None, y=None):
        if not 0 <= self.lo < self.hi <= 1:
            raise ValueError("thresholds need 0 <= lo < hi <= 1")
        self.classes_ = np.array([v.value for v in Vectorization], dtype=object)
        return self

    def predict(self, X):
        check_is_fitted(self, "classes_")
        x = np.asarray(X, dtype=float).ravel()
        out = np.full(x.shape, Vectorization.INDETERMINATE.value, dtype=object)
        out[x >= self.hi] = Vectorization.VECTORIZED.value
        out[x <= self.lo] = Vectorization.SCALAR.value
        return out


def classify_vectorization(job_id: str, store: PropertyStore, hi: float = 0.5,
                           lo: float = 0.05) -> tuple[Vectorization, Optional[float]]:
    """Label a job by the median of its per-cycle median AVX fractions."""
    recs = store.query(job_id, PropertyKind.AVX_FRACTION)
    med = _median([r.summary.median for r in recs]) if recs else None
    clf = VectorizationClassifier(hi=hi, lo=lo).fit()
    label = clf.predict([np.nan if med is None else med])[0]
    return Vectorization(label), med


# -- tool failures ----------------------------------------------------------

def spans_sampling_instant(job: JobRecord, interval_s: float) -> bool:
    """Whether some multiple of the interval falls in ``[start_ts, end_ts)``."""
    return math.ceil(job.start_ts / interval_s) * interval_s < job.end_ts


def detect_tool_failures(jobs: Iterable[JobRecord], store: Union[PropertyStore, Mapping[str, int]],
                         interval_s: float, exact_grid: bool = False) -> list[str]:
    """Jobs long enough to expect data that nonetheless have no records.

    By default a job is expected to have data when its rounded expected
    point count is at least one. Jobs between 0.5 and 1 interval long can
    fall entirely between two sampling instants and are then flagged
    without any fault; ``exact_grid=True`` additionally requires the job to
    span an actual sampling instant.
    """
    counts = store.record_counts() if isinstance(store, PropertyStore) else store
    return sorted(
        j.job_id for j in jobs
        if display_points(expected_points(j.runtime, interval_s)) >= 1
        and (not exact_grid or spans_sampling_instant(j, interval_s))
        and counts.get(j.job_id, 0) == 0
    )


# -- scatter output ---------------------------------------------------------

SVG_WIDTH, SVG_HEIGHT = 640, 480
SVG_MARGIN = (70, 20, 20, 50)  # left, right, top, bottom


def _decades(values) -> tuple[int, int]:
    lo = math.floor(math.log10(min(values)))
    hi = math.ceil(math.log10(max(values)))
    return lo, hi if hi > lo else lo + 1


def svg_position(cores: float, seconds: float, x_dec, y_dec) -> tuple[float, float]:
    left, right, top, bottom = SVG_MARGIN
    pw, ph = SVG_WIDTH - left - right, SVG_HEIGHT - top - bottom
    x = left + (math.log10(cores) - x_dec[0]) / (x_dec[1] - x_dec[0]) * pw
    y = top + ph - (math.log10(seconds) - y_dec[0]) / (y_dec[1] - y_dec[0]) * ph
    return x, y


def _css_class(label: str) -> str:
    return "label-" + re.sub(r"[^A-Za-z0-9_-]", "_", label)


def scatter_csv(jobs: Sequence[JobRecord], labels: Optional[Mapping[str, str]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["job_id", "cores", "runtime_s", "label"])
    for j in jobs:
        w.writerow([j.job_id, j.cores, j.runtime, (labels or {}).get(j.job_id, "")])
    return buf.getvalue()


def scatter_svg(jobs: Sequence[JobRecord], labels: Optional[Mapping[str, str]] = None) -> str:
    if not jobs:
        raise EmptyInput("nothing to plot")
    labels = labels or {}
    x_dec = _decades([j.cores for j in jobs])
    y_dec = _decades([j.runtime for j in jobs])
    left, right, top, bottom = SVG_MARGIN
    x0, x1 = left, SVG_WIDTH - right
    y0, y1 = top, SVG_HEIGHT - bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<path class="axes" d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="black"/>',
    ]
    for k in range(x_dec[0], x_dec[1] + 1):
        x, _ = svg_position(10.0 ** k, 10.0 ** y_dec[0], x_dec, y_dec)
        out.append(f'<line class="tick" x1="{x:.2f}" y1="{y1}" x2="{x:.2f}" y2="{y1 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y1 + 18}" font-size="11" text-anchor="middle">1e{k}</text>')
    for k in range(y_dec[0], y_dec[1] + 1):
        _, y = svg_position(10.0 ** x_dec[0], 10.0 ** k, x_dec, y_dec)
        out.append(f'<line class="tick" x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">1e{k}</text>')
    out.append(f'<text class="xlabel" x="{(x0 + x1) / 2:.1f}" y="{SVG_HEIGHT - 10}" '
               f'font-size="13" text-anchor="middle">CPU cores</text>')
    out.append(f'<text class="ylabel" x="18" y="{(y0 + y1) / 2:.1f}" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">'
               f'execution time (s)</text>')
    for j in jobs:
        x, y = svg_position(j.cores, j.runtime, x_dec, y_dec)
        cls = "marker " + _css_class(labels.get(j.job_id, "none"))
        out.append(f'<circle class="{cls}" data-job="{j.job_id}" cx="{x:.2f}" cy="{y:.2f}" r="3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_scatter(jobs: Sequence[JobRecord], labels: Optional[Mapping[str, str]], path,
                 fmt: str = "csv") -> Path:
    if not jobs:
        raise EmptyInput("nothing to plot")
    fmt = fmt.lower()
    if fmt == "csv":
        text = scatter_csv(jobs, labels)
    elif fmt == "svg":
        text = scatter_svg(jobs, labels)
    else:
        raise ValueError(f"unknown scatter format {fmt!r}")
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path
