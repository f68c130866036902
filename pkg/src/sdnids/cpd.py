"""Sequential CUSUM detector for a change in the mean of a univariate stream.

The detector learns the mean and long-run variance of the first ``m`` samples,
then monitors

    TS(m, l) = l * (mean(x[m+1 .. m+l]) - mean(x[1 .. m])) / sqrt(lrv)

against the threshold ``F(m, l) = cv * g(m, l)`` where

    g(m, l) = sqrt(m) * (1 + l/m) * (l / (l + m)) ** gamma

and ``cv`` is the confidence-quantile of ``sup_{0<t<=1} |W(t)| / t**gamma`` for a
standard Brownian motion ``W``, estimated by Monte Carlo.  The change point is
estimated as ``m + tau`` where ``tau`` is the first ``l`` with ``|TS| >= F``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_N_PATHS = 200_000
DEFAULT_N_GRID = 10_000
DEFAULT_SEED = 20_210_301

# paths simulated per block; bounds peak memory at ~40 MB for the default grid
_MC_BLOCK = 500


class DegenerateVarianceError(ValueError):
    """The learning window has zero long-run variance (constant metric)."""


class DetectorStoppedError(RuntimeError):
    """A sample was fed to a detector that already stopped."""


def default_bandwidth(m: int) -> int:
    return int(math.floor(m ** (1.0 / 3.0) + 1e-9))


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma < 0.5:
        raise ValueError(f"gamma must lie in [0, 0.5), got {gamma!r}")


@dataclass(frozen=True)
class DetectorParams:
    """Configuration of one sequential test.

    ``confidence`` is the target probability of *not* raising a false alarm, so
    the asymptotic false-alarm bound is ``1 - confidence``.  ``horizon`` is the
    number of monitoring samples after which a fresh monitoring period starts.
    """

    m: int = 200
    gamma: float = 0.0
    confidence: float = 0.95
    horizon: int = 60
    lrv_bandwidth: Optional[int] = None

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        _check_gamma(self.gamma)
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.lrv_bandwidth is not None and self.lrv_bandwidth < 0:
            raise ValueError("lrv_bandwidth must be non-negative")

    @property
    def bandwidth(self) -> int:
        if self.lrv_bandwidth is None:
            return default_bandwidth(self.m)
        return self.lrv_bandwidth


@dataclass(frozen=True)
class CriticalValue:
    gamma: float
    confidence: float
    value: float
    n_paths: int
    n_grid: int
    seed: int


@dataclass(frozen=True)
class Detection:
    stop_l: int
    cp_estimate: int
    statistic: float
    threshold: float
    shift_estimate: float
    # 1-based index of the triggering sample in the whole stream; differs from
    # cp_estimate only after horizon restarts
    sample_index: int = 0


class Phase(enum.Enum):
    LEARNING = "learning"
    MONITORING = "monitoring"
    STOPPED = "stopped"
    DEGENERATE = "degenerate"


class OutcomeKind(enum.Enum):
    LEARNING = "learning"
    NO_CHANGE = "no_change"
    CHANGE = "change"
    HORIZON_EXPIRED = "horizon_expired"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    l: Optional[int] = None
    detection: Optional[Detection] = None

    @property
    def triggered(self) -> bool:
        return self.kind is OutcomeKind.CHANGE


_LEARNING = Outcome(OutcomeKind.LEARNING)


def weight(m: int, l: int, gamma: float) -> float:
    """Threshold weight ``sqrt(m) (1 + l/m) (l/(l+m))**gamma``."""
    if l < 1:
        raise ValueError(f"l must be >= 1, got {l}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    _check_gamma(gamma)
    return math.sqrt(m) * (1.0 + l / m) * (l / (l + m)) ** gamma


def long_run_variance(samples: Sequence[float], bandwidth: int) -> float:
    """Bartlett-kernel (Newey-West) long-run variance of ``samples``.

    Autocovariances use the biased ``1/m`` normalisation, which keeps the
    estimate non-negative; it is clamped at zero against rounding anyway.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("long_run_variance needs at least two samples")
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    if np.ptp(x) == 0.0:
        return 0.0
    m = x.size
    d = x - x.mean()
    lrv = float(d @ d) / m
    for j in range(1, min(bandwidth, m - 1) + 1):
        w = 1.0 - j / (bandwidth + 1.0)
        lrv += 2.0 * w * float(d[j:] @ d[:-j]) / m
    return max(lrv, 0.0)


@functools.lru_cache(maxsize=16)
def _sup_samples(gamma: float, n_paths: int, n_grid: int, seed: int, two_sided: bool) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(1, n_grid + 1, dtype=float) / n_grid
    scale = math.sqrt(1.0 / n_grid) / t**gamma
    out = np.empty(n_paths)
    for start in range(0, n_paths, _MC_BLOCK):
        k = min(_MC_BLOCK, n_paths - start)
        w = rng.standard_normal((k, n_grid))
        np.cumsum(w, axis=1, out=w)
        if two_sided:
            np.abs(w, out=w)
        w *= scale
        out[start : start + k] = w.max(axis=1)
    out.setflags(write=False)
    return out


def sup_functional_samples(
    gamma: float,
    n_paths: int = DEFAULT_N_PATHS,
    n_grid: int = DEFAULT_N_GRID,
    seed: int = DEFAULT_SEED,
    two_sided: bool = True,
) -> np.ndarray:
    """Monte Carlo draws of ``sup_t |W(t)|/t**gamma`` on the grid ``k/n_grid``.

    With ``two_sided=False`` the functional is ``sup_t W(t)/t**gamma``.
    Results are memoised per argument tuple and returned read-only.
    """
    _check_gamma(gamma)
    if n_paths < 1 or n_grid < 1:
        raise ValueError("n_paths and n_grid must be positive")
    return _sup_samples(float(gamma), int(n_paths), int(n_grid), int(seed), bool(two_sided))


def critical_value(
    gamma: float,
    confidence: float,
    n_paths: int = DEFAULT_N_PATHS,
    n_grid: int = DEFAULT_N_GRID,
    seed: int = DEFAULT_SEED,
    two_sided: bool = True,
) -> CriticalValue:
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    sups = sup_functional_samples(gamma, n_paths, n_grid, seed, two_sided)
    value = float(np.quantile(sups, confidence))
    return CriticalValue(float(gamma), float(confidence), value, int(n_paths), int(n_grid), int(seed))


_PACKAGED_TABLE = Path(__file__).parent / "data" / "critical_values.txt"


def _key(gamma: float, confidence: float, n_paths: int, n_grid: int, seed: int) -> tuple:
    return (round(float(gamma), 6), round(float(confidence), 6), int(n_paths), int(n_grid), int(seed))


class CriticalValueCache:
    """Critical values persisted one per line as
    ``gamma confidence n_paths n_grid seed value``.

    Lookups fall back to the table shipped with the package before running
    the Monte Carlo; fresh values are appended to ``path`` (when given).
    """

    def __init__(self, path: Optional[Path | str] = None, use_packaged: bool = True):
        self.path = Path(path) if path is not None else None
        self._values: dict[tuple, float] = {}
        if use_packaged and _PACKAGED_TABLE.exists():
            self._values.update(read_cache_file(_PACKAGED_TABLE))
        if self.path is not None and self.path.exists():
            self._values.update(read_cache_file(self.path))
        self.computed = 0

    def __contains__(self, key: tuple) -> bool:
        return _key(*key) in self._values

    def __len__(self) -> int:
        return len(self._values)

    def get(
        self,
        gamma: float,
        confidence: float,
        n_paths: int = DEFAULT_N_PATHS,
        n_grid: int = DEFAULT_N_GRID,
        seed: int = DEFAULT_SEED,
    ) -> CriticalValue:
        key = _key(gamma, confidence, n_paths, n_grid, seed)
        if key not in self._values:
            cv = critical_value(gamma, confidence, n_paths, n_grid, seed)
            self._values[key] = cv.value
            self.computed += 1
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    fh.write(format_cache_line(cv) + "\n")
        return CriticalValue(key[0], key[1], self._values[key], key[2], key[3], key[4])

    def items(self) -> Iterable[tuple[tuple, float]]:
        return self._values.items()


def format_cache_line(cv: CriticalValue) -> str:
    return f"{cv.gamma:.6g} {cv.confidence:.6g} {cv.n_paths} {cv.n_grid} {cv.seed} {cv.value:.17g}"


def read_cache_file(path: Path | str) -> dict[tuple, float]:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        g, c, n_paths, n_grid, seed, v = line.split()
        values[_key(float(g), float(c), int(n_paths), int(n_grid), int(seed))] = float(v)
    return values


@dataclass
class CusumDetector:
    """Streaming detector; feed samples one at a time with :meth:`ingest`.

    A detector belongs to one consumer.  Once it reports a change it stays
    stopped; a constant learning window leaves it in the ``DEGENERATE`` phase.
    """

    params: DetectorParams
    critical: CriticalValue
    phase: Phase = Phase.LEARNING
    learned_count: int = 0
    baseline_mean: float = math.nan
    lrv: float = math.nan
    monitor_count: int = 0
    monitor_sum: float = 0.0
    samples_seen: int = 0
    detection: Optional[Detection] = None
    _learning: list = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if abs(self.critical.gamma - self.params.gamma) > 1e-9:
            raise ValueError("critical value was calibrated for a different gamma")
        self._sqrt_m = math.sqrt(self.params.m)

    @classmethod
    def from_cache(cls, params: DetectorParams, cache: Optional[CriticalValueCache] = None) -> "CusumDetector":
        cache = cache if cache is not None else CriticalValueCache()
        return cls(params, cache.get(params.gamma, params.confidence))

    def threshold(self, l: int) -> float:
        return self.critical.value * weight(self.params.m, l, self.params.gamma)

    def statistic(self, l: Optional[int] = None) -> tuple[float, float]:
        """Return ``(E, TS)`` for the current monitoring window."""
        if self.phase is Phase.DEGENERATE or (self.phase is not Phase.LEARNING and self.lrv == 0.0):
            raise DegenerateVarianceError("learning window has zero long-run variance")
        if self.phase is Phase.LEARNING:
            raise RuntimeError("statistic is undefined while learning")
        l = self.monitor_count if l is None else l
        if l != self.monitor_count or l < 1:
            raise ValueError("statistic is only available for the current monitoring length")
        e = self.monitor_sum / l - self.baseline_mean
        return e, l * e / math.sqrt(self.lrv)

    def ingest(self, x: float) -> Outcome:
        phase = self.phase
        if phase is Phase.MONITORING:
            self.samples_seen += 1
            return self._monitor(float(x))
        if phase is Phase.LEARNING:
            self._learning.append(float(x))
            self.learned_count += 1
            self.samples_seen += 1
            if self.learned_count == self.params.m:
                self._finish_learning()
            return _LEARNING
        if phase is Phase.STOPPED:
            raise DetectorStoppedError("detector already reported a change")
        raise DegenerateVarianceError("learning window has zero long-run variance")

    def _finish_learning(self) -> None:
        window = np.asarray(self._learning)
        self.baseline_mean = float(window.mean())
        self.lrv = long_run_variance(window, self.params.bandwidth)
        self._learning = []
        if self.lrv == 0.0:
            self.phase = Phase.DEGENERATE
            raise DegenerateVarianceError("learning window has zero long-run variance")
        self._inv_sd = 1.0 / math.sqrt(self.lrv)
        self.phase = Phase.MONITORING

    def _monitor(self, x: float) -> Outcome:
        p = self.params
        self.monitor_count += 1
        self.monitor_sum += x
        l = self.monitor_count
        e = self.monitor_sum / l - self.baseline_mean
        ts = l * e * self._inv_sd
        thr = self.critical.value * self._sqrt_m * (1.0 + l / p.m) * (l / (l + p.m)) ** p.gamma
        if abs(ts) >= thr:
            self.phase = Phase.STOPPED
            self.detection = Detection(l, p.m + l, ts, thr, e, self.samples_seen)
            return Outcome(OutcomeKind.CHANGE, l, self.detection)
        if l >= p.horizon:
            self.monitor_count = 0
            self.monitor_sum = 0.0
            return Outcome(OutcomeKind.HORIZON_EXPIRED, l)
        return Outcome(OutcomeKind.NO_CHANGE, l)


def first_detection(series: Sequence[float], params: DetectorParams, critical: CriticalValue) -> Optional[Detection]:
    """Vectorised equivalent of streaming ``series`` through a fresh detector.

    Returns the first :class:`Detection`, or ``None`` if the series ends first.
    Raises :class:`DegenerateVarianceError` for a constant learning window.
    """
    x = np.asarray(series, dtype=float)
    m, h = params.m, params.horizon
    if x.size <= m:
        return None
    learn = x[:m]
    lrv = long_run_variance(learn, params.bandwidth)
    if lrv == 0.0:
        raise DegenerateVarianceError("learning window has zero long-run variance")
    mean = float(learn.mean())
    inv_sd = 1.0 / math.sqrt(lrv)
    sqrt_m = math.sqrt(m)
    mon = x[m:]
    ls = np.arange(1, h + 1, dtype=float)
    thr_full = critical.value * sqrt_m * (1.0 + ls / m) * (ls / (ls + m)) ** params.gamma
    for start in range(0, mon.size, h):
        seg = mon[start : start + h]
        l = ls[: seg.size]
        csum = np.cumsum(seg)
        e = csum / l - mean
        ts = l * e * inv_sd
        hit = np.nonzero(np.abs(ts) >= thr_full[: seg.size])[0]
        if hit.size:
            i = int(hit[0])
            return Detection(i + 1, m + i + 1, float(ts[i]), float(thr_full[i]), float(e[i]), m + start + i + 1)
    return None
