"""Proprioceptive load pipeline and KNN terrain-depth classification.

Simulated joint torques are mapped to a servo-style load percentage,
corrupted with multiplicative sensor noise, smoothed with a first-order
low-pass filter, rectified, and summarized by a per-cycle median.  A
K-nearest-neighbors model over (median load, phase offset) features then
classifies bead depth into the {0, 20, 40} mm classes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError

DEPTH_CLASSES = (0, 20, 40)

LOWPASS_THEN_RECTIFY = "lowpass_then_rectify"
RECTIFY_THEN_LOWPASS = "rectify_then_lowpass"


# ---------------------------------------------------------------------------
# Signal pipeline

@dataclass(frozen=True)
class LoadPipelineConfig:
    gain: float = 175.0          # load % per unit nondimensional torque
    clip: float = 100.0          # hardware register limit, %
    noise_cov: float = 0.13      # multiplicative coefficient of variation
    bias_sd: float = 5.0         # load %, std of the per-trial zero offset
    bias: tuple | None = None    # fixed per-session offsets; None = draw
    alpha: float = 0.45          # low-pass smoothing factor
    order: str = LOWPASS_THEN_RECTIFY

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.noise_cov < 0:
            raise ValueError("noise_cov must be nonnegative")
        if self.bias_sd < 0:
            raise ValueError("bias_sd must be nonnegative")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.order not in (LOWPASS_THEN_RECTIFY, RECTIFY_THEN_LOWPASS):
            raise ValueError(f"unknown pipeline order {self.order!r}")


@dataclass
class LoadSeries:
    """Per-timestep load signal (% of stall torque) for one joint."""

    samples: np.ndarray
    joint: str = "lower"
    cycle_bounds: np.ndarray | None = None   # timestep index of each cycle start


def _draw_bias(bias_sd, rng):
    """Per-trial register zero offset: bounded uniform with std ``bias_sd``."""
    lim = math.sqrt(3.0) * bias_sd
    return rng.uniform(-lim, lim, 3)


def torque_to_load(tau, gain, clip=100.0):
    """Linear torque-to-load map, clipped to the hardware percentage range."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    return np.clip(gain * np.asarray(tau, dtype=float), -clip, clip)


def add_sensor_noise(samples, cov, seed):
    """Multiplicative Gaussian noise: x -> x * (1 + cov * z), seeded."""
    if cov < 0:
        raise ValueError("cov must be nonnegative")
    samples = np.asarray(samples, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(samples.shape)
    return samples * (1.0 + cov * z)


def lowpass(samples, alpha):
    """First-order exponential smoothing, y[0] = x[0]."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("cannot filter an empty series")
    y = np.empty_like(samples)
    y[0] = samples[0]
    for k in range(1, len(samples)):
        y[k] = alpha * samples[k] + (1.0 - alpha) * y[k - 1]
    return y


def rectify(samples):
    """Sample-wise absolute value, removing rotation-direction dependence."""
    return np.abs(np.asarray(samples, dtype=float))


def cycle_median(samples, cycle_bounds, cycle_index):
    """Median of the processed samples within one cycle's index range."""
    bounds = list(cycle_bounds)
    if not 0 <= cycle_index < len(bounds):
        raise ValueError(f"invalid cycle index {cycle_index}")
    lo = bounds[cycle_index]
    hi = bounds[cycle_index + 1] if cycle_index + 1 < len(bounds) else len(samples)
    if hi <= lo:
        raise ValueError(f"cycle {cycle_index} is empty")
    return float(np.median(np.asarray(samples, dtype=float)[lo:hi]))


class OnlineLoadPipeline:
    """Streaming version of the load pipeline for all three body joints.

    Filter state persists across cycle boundaries within a trial, matching
    a servo-side filter that never resets.
    """

    def __init__(self, cfg: LoadPipelineConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        # Register zero offset: drawn once per trial (or pinned for a
        # session), constant thereafter, so it survives filtering and
        # per-cycle medians like real sensor drift does.
        if cfg.bias is not None:
            self._bias = np.asarray(cfg.bias, dtype=float)
        elif cfg.bias_sd > 0 and cfg.noise_cov > 0:
            self._bias = _draw_bias(cfg.bias_sd, rng)
        else:
            self._bias = np.zeros(3)
        self._y = None
        self._raw = []
        self._processed = []

    def push_raw(self, tau):
        """Feed one timestep of nondimensional torques (3,); returns the
        noisy raw load sample."""
        cfg = self.cfg
        raw = torque_to_load(tau, cfg.gain, cfg.clip) + self._bias
        if cfg.noise_cov > 0:
            raw = raw * (1.0 + cfg.noise_cov * self.rng.standard_normal(3))
        self._raw.append(raw)
        if cfg.order == LOWPASS_THEN_RECTIFY:
            x = raw
        else:
            x = np.abs(raw)
        if self._y is None:
            self._y = np.array(x, dtype=float)
        else:
            self._y = cfg.alpha * x + (1.0 - cfg.alpha) * self._y
        if cfg.order == LOWPASS_THEN_RECTIFY:
            self._processed.append(np.abs(self._y))
        else:
            self._processed.append(self._y.copy())
        return raw

    def cycle_median(self, lo, hi):
        block = np.asarray(self._processed[lo:hi])
        return np.median(block, axis=0)

    def raw_history(self):
        if not self._raw:
            return np.empty((0, 3))
        return np.asarray(self._raw)


def trial_cycle_medians(torques, steps_per_cycle, cfg, rng):
    """Full load pipeline applied offline to a (N, 3) torque history.

    Returns per-cycle medians (C, 3).  Equivalent to streaming the trial
    through OnlineLoadPipeline with the same generator.
    """
    torques = np.asarray(torques, dtype=float)
    n = len(torques)
    if n == 0 or n % steps_per_cycle != 0:
        raise ValueError("torque history must hold whole cycles")
    raw = torque_to_load(torques, cfg.gain, cfg.clip)
    if cfg.bias is not None:
        raw = raw + np.asarray(cfg.bias, dtype=float)
    elif cfg.bias_sd > 0 and cfg.noise_cov > 0:
        raw = raw + _draw_bias(cfg.bias_sd, rng)
    if cfg.noise_cov > 0:
        raw = raw * (1.0 + cfg.noise_cov * rng.standard_normal(raw.shape))
    if cfg.order == LOWPASS_THEN_RECTIFY:
        proc = np.abs(lowpass(raw, cfg.alpha))
    else:
        proc = lowpass(np.abs(raw), cfg.alpha)
    c = n // steps_per_cycle
    return np.median(proc.reshape(c, steps_per_cycle, 3), axis=1)


# ---------------------------------------------------------------------------
# KNN depth classification

@dataclass(frozen=True)
class LabeledFeature:
    tau_m: float     # load %, cycle median
    phi: float       # rad, commanded phase offset
    label: int       # depth class, mm

    def __post_init__(self):
        if self.label not in DEPTH_CLASSES:
            raise ValueError(f"label {self.label} not in {DEPTH_CLASSES}")


@dataclass(frozen=True)
class DepthClassifier:
    features: np.ndarray   # (n, 2) standardized (tau_m, phi)
    labels: np.ndarray     # (n,)
    k: int
    mean: np.ndarray       # (2,)
    scale: np.ndarray      # (2,)


def knn_train(data, k):
    """Fit a KNN depth classifier with z-scored features."""
    if not data:
        raise ValueError("training data must be nonempty")
    if not 1 <= k <= len(data):
        raise ValueError(f"k must lie in [1, {len(data)}], got {k}")
    X = np.array([[f.tau_m, f.phi] for f in data], dtype=float)
    y = np.array([f.label for f in data])
    present = set(np.unique(y))
    if present != set(DEPTH_CLASSES):
        missing = sorted(set(DEPTH_CLASSES) - present)
        raise ValueError(f"training data missing depth classes {missing}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return DepthClassifier((X - mean) / scale, y, k, mean, scale)


def knn_classify(c, tau_m, phi):
    """Majority label among the k nearest standardized-Euclidean neighbors.

    Ties are broken by the nearest neighbor among the tied classes, then by
    the smaller depth label.
    """
    q = (np.array([tau_m, phi], dtype=float) - c.mean) / c.scale
    d2 = np.sum((c.features - q) ** 2, axis=1)
    order = np.lexsort((np.arange(len(d2)), d2))
    top = c.labels[order[: c.k]]
    counts = {lab: int((top == lab).sum()) for lab in DEPTH_CLASSES}
    best = max(counts.values())
    tied = [lab for lab in DEPTH_CLASSES if counts[lab] == best]
    if len(tied) == 1:
        return tied[0]
    for lab in top:  # nearest-first scan over the k neighbors
        if lab in tied:
            return int(lab)
    return min(tied)


def evaluate(c, test_set):
    """3x3 confusion matrix (rows = true class) and overall accuracy."""
    if not test_set:
        raise ValueError("test set must be nonempty")
    idx = {lab: i for i, lab in enumerate(DEPTH_CLASSES)}
    confusion = np.zeros((3, 3), dtype=int)
    for f in test_set:
        pred = knn_classify(c, f.tau_m, f.phi)
        confusion[idx[f.label], idx[pred]] += 1
    accuracy = float(np.trace(confusion)) / len(test_set)
    return confusion, accuracy


@dataclass(frozen=True)
class LinearDepthEstimator:
    """Piecewise-linear depth estimate built from two KNN decision boundaries."""

    boundary_low: float    # tau_m at the 0 <-> 20 mm transition
    boundary_high: float   # tau_m at the 20 <-> 40 mm transition

    def __call__(self, tau_m):
        slope = 20.0 / (self.boundary_high - self.boundary_low)
        d = 10.0 + slope * (tau_m - self.boundary_low)
        return float(np.clip(d, 0.0, 40.0))


def depth_from_load_linear(c, phi_probe=-math.pi / 6, n_scan=512):
    """Linear depth estimator from the classifier's tau_m decision boundaries.

    Scans a 1-D tau_m probe at fixed phi; the class sequence along the probe
    must be the simply connected 0 / 20 / 40 progression, otherwise the
    classifier's structure cannot support a monotone linear map.
    """
    tau_train = c.features[:, 0] * c.scale[0] + c.mean[0]
    lo, hi = float(tau_train.min()), float(tau_train.max())
    margin = 0.1 * (hi - lo)
    grid = np.linspace(lo - margin, hi + margin, n_scan)
    preds = np.array([knn_classify(c, t, phi_probe) for t in grid])

    blocks = [preds[0]]
    for p in preds[1:]:
        if p != blocks[-1]:
            blocks.append(p)
    if blocks != [0, 20, 40]:
        raise StructureError(
            f"decision regions along the tau_m probe are {blocks}, "
            "not a simply connected 0/20/40 progression"
        )

    def bisect(lo_t, hi_t, lo_class):
        for _ in range(60):
            mid = 0.5 * (lo_t + hi_t)
            if knn_classify(c, mid, phi_probe) == lo_class:
                lo_t = mid
            else:
                hi_t = mid
        return 0.5 * (lo_t + hi_t)

    last0 = grid[np.nonzero(preds == 0)[0][-1]]
    first20 = grid[np.nonzero(preds == 20)[0][0]]
    last20 = grid[np.nonzero(preds == 20)[0][-1]]
    first40 = grid[np.nonzero(preds == 40)[0][0]]
    b_low = bisect(last0, first20, 0)
    b_high = bisect(last20, first40, 20)
    return LinearDepthEstimator(b_low, b_high)


# ---------------------------------------------------------------------------
# Dataset CSV interface

DATASET_COLUMNS = ("joint", "phi_rad", "tau_m_pct", "depth_mm", "trial_id",
                   "cycle_id")


def write_dataset(path, rows):
    """Write (joint, phi, tau_m, depth, trial, cycle) feature rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for joint, phi, tau_m, depth, trial, cycle in rows:
            w.writerow([joint, f"{phi:.9f}", f"{tau_m:.9f}", depth, trial, cycle])


def read_dataset(path):
    rows = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames) != DATASET_COLUMNS:
            raise ValueError(f"unexpected dataset columns {r.fieldnames}")
        for rec in r:
            rows.append((rec["joint"], float(rec["phi_rad"]),
                         float(rec["tau_m_pct"]), int(rec["depth_mm"]),
                         int(rec["trial_id"]), int(rec["cycle_id"])))
    return rows
