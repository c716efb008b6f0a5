"""Weibull baseline of benign inter-arrival times and KS deviation scoring."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import EmptySample, NoConvergence, TooFewSamples
from .features import FeatureVector

MIN_FIT_SAMPLES = 30
MIN_WINDOW = 30


@dataclass(frozen=True)
class WeibullParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"Weibull parameters must be positive: {self}")

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
        return -np.expm1(-((x / self.scale) ** self.shape))

    def ppf(self, q):
        q = np.asarray(q, dtype=np.float64)
        return self.scale * (-np.log1p(-q)) ** (1.0 / self.shape)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        k, lam = self.shape, self.scale
        z = x / lam
        return math.log(k / lam) + (k - 1.0) * np.log(z) - z ** k

    def log_likelihood(self, x) -> float:
        return float(np.sum(self.logpdf(x)))


@dataclass(frozen=True)
class DeviationScore:
    window_id: int
    ks_stat: float
    n: int
    flagged: bool


def _profile(k: float, logs: np.ndarray) -> tuple[float, float]:
    """MLE profile equation for the shape and its derivative.

    g(k) = sum(x^k ln x) / sum(x^k) - 1/k - mean(ln x); g is strictly
    increasing (g' is a weighted variance of ln x plus 1/k^2).
    """
    a = k * logs
    w = np.exp(a - a.max())
    sw = w.sum()
    m1 = (w * logs).sum() / sw
    m2 = (w * logs * logs).sum() / sw
    g = m1 - 1.0 / k - logs.mean()
    dg = (m2 - m1 * m1) + 1.0 / (k * k)
    return g, dg


def fit_weibull(samples: Iterable[float], tol: float = 1e-9, max_iter: int = 200) -> WeibullParams:
    """Maximum-likelihood Weibull fit.

    Zeros are dropped first. The shape is the root of the profile equation,
    found by Newton steps kept inside a bisection bracket; the scale follows
    in closed form. Samples are divided by their geometric mean before
    solving, which leaves the shape unchanged and keeps x**k in range.
    """
    x = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite and non-negative")
    x = x[x > 0]
    if x.size < MIN_FIT_SAMPLES:
        raise TooFewSamples(f"need {MIN_FIT_SAMPLES} positive samples, got {x.size}", n=int(x.size))

    logs_raw = np.log(x)
    center = logs_raw.mean()
    logs = logs_raw - center
    spread = logs.std()
    if spread == 0.0:
        raise NoConvergence("all samples identical; shape diverges", last=math.inf)

    # Method-of-moments start: sd(ln X) = pi / (k sqrt 6).
    k = math.pi / (math.sqrt(6.0) * spread)
    lo, hi = 0.0, math.inf
    for _ in range(max_iter):
        g, dg = _profile(k, logs)
        if g > 0:
            hi = min(hi, k)
        else:
            lo = max(lo, k)
        step = g / dg
        new = k - step
        if not (lo < new < hi) or not math.isfinite(new):
            new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * k
        if abs(new - k) < tol:
            k = new
            break
        k = new
    else:
        raise NoConvergence(f"shape did not converge in {max_iter} iterations", last=k)

    a = k * logs
    amax = a.max()
    scale = math.exp(center + (amax + math.log(np.exp(a - amax).mean())) / k)
    return WeibullParams(float(k), float(scale))


def ks_distance(samples, params: WeibullParams) -> float:
    """Exact one-sample Kolmogorov-Smirnov statistic against ``params``."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise EmptySample("KS distance of an empty sample")
    if x[0] < 0:
        raise ValueError("samples must be non-negative")
    f = params.cdf(x)
    i = np.arange(1, n + 1, dtype=np.float64)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(min(1.0, max(d_plus, d_minus, 0.0)))


def default_threshold(window: int) -> float:
    """Asymptotic 5% KS critical value."""
    return 1.36 / math.sqrt(window)


def score_windows(flows: Iterable[FeatureVector], baseline: WeibullParams, window: int = 100,
                  threshold: float | None = None) -> list[DeviationScore]:
    """Score consecutive count-based windows of per-flow mean IAT (seconds)."""
    if window < MIN_WINDOW:
        raise ValueError(f"window must be at least {MIN_WINDOW}")
    if threshold is None:
        threshold = default_threshold(window)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    iat_s = np.array([f.flow_iat_mean for f in flows], dtype=np.float64) / 1e6
    out = []
    for wid, start in enumerate(range(0, iat_s.size, window)):
        chunk = iat_s[start:start + window]
        if chunk.size < MIN_WINDOW:
            break
        d = ks_distance(chunk, baseline)
        out.append(DeviationScore(wid, d, int(chunk.size), d > threshold))
    return out


def window_slices(n_rows: int, window: int) -> list[slice]:
    """Row ranges matching the windows ``score_windows`` produces."""
    return [slice(s, min(s + window, n_rows)) for s in range(0, n_rows, window)
            if min(s + window, n_rows) - s >= MIN_WINDOW]


# ---------------------------------------------------------------- persistence


def save_baseline(params: WeibullParams, fitted_n: int, fitted_at: str, stream: IO[str]):
    json.dump({"shape": params.shape, "scale": params.scale, "fitted_n": fitted_n,
               "fitted_at": fitted_at}, stream, indent=2, sort_keys=True)
    stream.write("\n")


def load_baseline(stream: IO[str]) -> WeibullParams:
    doc = json.load(stream)
    return WeibullParams(float(doc["shape"]), float(doc["scale"]))


def write_scores_csv(scores: Iterable[DeviationScore], stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["window_id", "ks_stat", "n", "flagged"])
    for s in scores:
        w.writerow([s.window_id, f"{s.ks_stat:.6f}", s.n, int(s.flagged)])
