"""Channel features from an estimated power delay profile.

Four statistics per profile: the number of significant taps, their average
power, their relative RMS delay spread and the smoothed received power.
Powers are linear; thresholds are given in dB with the ``10 * log10``
convention.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DegenerateDataError, InputShapeError, ParseError

FEATURE_NAMES = ("num_taps", "avg_tap_power", "rel_rms_delay", "smoothed_rx_power")
DEFAULT_RESOLUTION = 10e-6


@dataclass(frozen=True, eq=False)
class PowerDelayProfile:
    delays: np.ndarray
    powers: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float).ravel()
        p = np.asarray(self.powers, dtype=float).ravel()
        if d.shape != p.shape:
            raise InputShapeError("one power per delay is required")
        if d.size == 0:
            raise DegenerateDataError("a power delay profile needs at least one tap")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(p))):
            raise InputShapeError("delays and powers must be finite")
        if np.any(np.diff(d) <= 0):
            raise InputShapeError("delays must be strictly increasing")
        if np.any(p < 0):
            raise InputShapeError("tap powers must be non-negative")
        if not np.any(p > 0):
            raise DegenerateDataError("every tap has zero power")
        if not self.resolution > 0:
            raise InputShapeError("resolution must be positive")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "powers", p)

    @classmethod
    def from_taps(cls, taps, resolution=DEFAULT_RESOLUTION):
        taps = list(taps)
        if not taps:
            raise DegenerateDataError("a power delay profile needs at least one tap")
        d, p = zip(*taps)
        return cls(np.array(d), np.array(p), resolution)

    def __len__(self):
        return self.delays.size

    def scaled(self, c):
        return PowerDelayProfile(self.delays, self.powers * c, self.resolution)

    def shifted(self, delta):
        return PowerDelayProfile(self.delays + delta, self.powers, self.resolution)


@dataclass(frozen=True)
class FeatureExtractionConfig:
    tap_threshold_db: float = 20.0
    smoothing_window: int = 3

    def __post_init__(self):
        if not self.tap_threshold_db > 0:
            raise ConfigurationError("tap_threshold_db must be positive")
        if int(self.smoothing_window) != self.smoothing_window or self.smoothing_window < 1:
            raise ConfigurationError("smoothing_window must be a positive integer")


@dataclass(frozen=True)
class FeatureVector:
    num_taps: int
    avg_tap_power: float
    rel_rms_delay: float
    smoothed_rx_power: float

    def to_array(self):
        return np.array([self.num_taps, self.avg_tap_power, self.rel_rms_delay, self.smoothed_rx_power], dtype=float)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def moving_average_max(powers, window):
    """Largest moving average of ``powers`` over full windows of ``window`` taps.

    A profile shorter than the window is averaged as a whole.
    """
    p = np.asarray(powers, dtype=float)
    w = min(window, p.size)
    c = np.concatenate([[0.0], np.cumsum(p)])
    return float(np.max(c[w:] - c[:-w]) / w)


def extract_features(pdp: PowerDelayProfile, cfg: FeatureExtractionConfig | None = None) -> FeatureVector:
    cfg = cfg or FeatureExtractionConfig()
    p = pdp.powers
    keep = p >= p.max() * db_to_linear(-cfg.tap_threshold_db)
    pk = p[keep]
    tau = pdp.delays[keep] - pdp.delays[keep][0]
    w = pk / pk.sum()
    mean = float(np.dot(w, tau))
    # Central second moment; clip tiny negative values from rounding.
    spread = float(np.sqrt(max(float(np.dot(w, (tau - mean) ** 2)), 0.0)))
    return FeatureVector(
        num_taps=int(keep.sum()),
        avg_tap_power=float(pk.mean()),
        rel_rms_delay=spread,
        smoothed_rx_power=moving_average_max(p, cfg.smoothing_window),
    )


def read_pdp_csv(path, resolution=DEFAULT_RESOLUTION) -> PowerDelayProfile:
    """Read a profile from a CSV with header ``delay_s,power_linear``."""
    delays, powers = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"delay_s", "power_linear"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for line, row in enumerate(reader, start=2):
            try:
                delays.append(float(row["delay_s"]))
                powers.append(float(row["power_linear"]))
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{line}: non-numeric value") from None
    return PowerDelayProfile(np.array(delays), np.array(powers), resolution)


def write_pdp_csv(path, pdp: PowerDelayProfile):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_s", "power_linear"])
        for d, p in zip(pdp.delays, pdp.powers):
            w.writerow([repr(float(d)), repr(float(p))])


def synthetic_pdp(rng, n_taps=12, decay_s=2e-4, gain=1.0, resolution=DEFAULT_RESOLUTION, sparsity=0.5):
    """Random sparse exponentially decaying profile on the ``resolution`` grid.

    A stand-in for measured channels: tap powers are exponential draws
    around ``gain * exp(-tau / decay_s)`` and roughly ``sparsity`` of the
    grid positions carry no energy.
    """
    tau = np.arange(n_taps) * resolution
    p = gain * np.exp(-tau / decay_s) * rng.exponential(size=n_taps)
    p[1:][rng.uniform(size=n_taps - 1) < sparsity] = 0.0
    p[0] = max(p[0], 1e-12)
    return PowerDelayProfile(tau, p, resolution)


def features_matrix(profiles, cfg=None) -> np.ndarray:
    """Stack feature vectors of ``profiles`` into a ``(len, 4)`` array."""
    return np.vstack([extract_features(p, cfg).to_array() for p in profiles])
