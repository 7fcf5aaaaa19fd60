"""Synthetic channel-feature datasets.

Each (sensor, feature, class) marginal is a univariate Gaussian KDE. Correlated
datasets are drawn through a Gaussian copula: an ``N x K`` standard normal
matrix whose entries for the same feature are equicorrelated across sensors
(correlation ``alpha``) and independent across features, mapped to uniforms
with the normal CDF and then through each marginal's inverse CDF.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .exceptions import (
    ConfigurationError,
    DegenerateDataError,
    DomainError,
    EmptyInputError,
    InputShapeError,
)

ALICE, EVE = 1, 0

_CDF_CHUNK = 2 ** 22  # max kernel evaluations held in memory at once
_TABLE_POINTS = 2 ** 16


# --------------------------------------------------------------------------
# kernel density estimates

def silverman_bandwidth(series) -> float:
    x = np.asarray(series, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-0.2)


def scott_bandwidth(series) -> float:
    x = np.asarray(series, dtype=float)
    return float(np.std(x, ddof=1)) * len(x) ** (-0.2)


BANDWIDTH_RULES = {"silverman": silverman_bandwidth, "scott": scott_bandwidth}


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Gaussian kernel density estimate: equal-weight kernels at ``centers``."""

    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).ravel()
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise DegenerateDataError("a KDE needs at least one finite center")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise DegenerateDataError(f"bandwidth must be positive, got {self.bandwidth!r}")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def count(self) -> int:
        return self.centers.size

    @property
    def support(self) -> tuple[float, float]:
        """Interval holding all but ~1e-23 of the probability mass."""
        return (float(self.centers.min() - 10 * self.bandwidth),
                float(self.centers.max() + 10 * self.bandwidth))

    def _kernel_mean(self, x, fn):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.size)
        step = max(1, _CDF_CHUNK // self.count)
        h = self.bandwidth
        for s in range(0, flat.size, step):
            z = (flat[s:s + step, None] - self.centers[None, :]) / h
            out[s:s + step] = fn(z).mean(axis=1)
        return out.reshape(x.shape)

    def pdf(self, x):
        h = self.bandwidth
        return self._kernel_mean(x, lambda z: np.exp(-0.5 * z * z)) / (h * np.sqrt(2 * np.pi))

    def cdf(self, x):
        return self._kernel_mean(x, ndtr)

    def ppf(self, u, tol=1e-10):
        return kde_inverse_cdf(self, u, tol)

    @cached_property
    def _table(self):
        # Linear binning of the centers onto a fine grid, then an FFT convolution
        # with the kernel CDF; error is O((spacing / bandwidth)^2).
        lo, hi = self.support
        grid = np.linspace(lo, hi, _TABLE_POINTS)
        step = grid[1] - grid[0]
        pos = (self.centers - lo) / step
        left = np.floor(pos).astype(np.int64)
        frac = pos - left
        weights = np.bincount(left, 1.0 - frac, minlength=_TABLE_POINTS + 1)
        weights += np.bincount(left + 1, frac, minlength=_TABLE_POINTS + 1)
        weights = weights[:_TABLE_POINTS] / self.count
        offsets = np.arange(-(_TABLE_POINTS - 1), _TABLE_POINTS) * (step / self.bandwidth)
        F = fftconvolve(weights, ndtr(offsets))[_TABLE_POINTS - 1:2 * _TABLE_POINTS - 1]
        F = np.clip(np.maximum.accumulate(F), 0.0, 1.0)
        F[0], F[-1] = 0.0, 1.0
        # Drop flat stretches so the inverse interpolation sees strictly increasing knots.
        keep = np.concatenate([[True], np.diff(F) > 0])
        return F[keep], grid[keep]

    def ppf_table(self, u):
        """Fast inverse CDF by linear interpolation in a dense binned CDF table.

        Accurate to about 1e-6 in probability; use :meth:`ppf` when the tight
        bisection tolerance is needed.
        """
        F, grid = self._table
        return np.interp(u, F, grid)


def fit_kde(series, bandwidth_rule="silverman") -> KdeModel:
    """Fit a Gaussian KDE with one kernel per observation."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateDataError("need at least two observations to fit a KDE")
    if not np.all(np.isfinite(x)):
        raise DegenerateDataError("series contains non-finite values")
    if np.all(x == x[0]):
        raise DegenerateDataError("series has zero variance")
    if callable(bandwidth_rule):
        h = float(bandwidth_rule(x))
    elif isinstance(bandwidth_rule, str):
        try:
            h = BANDWIDTH_RULES[bandwidth_rule](x)
        except KeyError:
            raise ConfigurationError(f"unknown bandwidth rule {bandwidth_rule!r}") from None
    else:
        h = float(bandwidth_rule)
    return KdeModel(x, h)


def kde_pdf(model: KdeModel, x):
    return model.pdf(x)


def kde_cdf(model: KdeModel, x):
    return model.cdf(x)


def kde_inverse_cdf(model: KdeModel, u, tol: float = 1e-10):
    """Invert the KDE CDF by bracketing and bisection.

    Works elementwise on arrays; every returned ``x`` satisfies
    ``|cdf(x) - u| <= tol`` unless floating-point resolution in ``x`` is
    exhausted first.
    """
    u_arr = np.asarray(u, dtype=float)
    if not np.all((u_arr > 0) & (u_arr < 1)):
        raise DomainError("u must lie strictly between 0 and 1")
    if not tol > 0:
        raise DomainError("tol must be positive")
    flat = u_arr.ravel()
    lo_x, hi_x = model.support
    lo = np.full(flat.size, lo_x)
    hi = np.full(flat.size, hi_x)
    span = hi_x - lo_x
    while True:
        bad = model.cdf(lo) > flat
        if not bad.any():
            break
        lo[bad] -= span
    while True:
        bad = model.cdf(hi) < flat
        if not bad.any():
            break
        hi[bad] += span

    x = 0.5 * (lo + hi)
    active = np.arange(flat.size)
    for _ in range(200):
        mid = 0.5 * (lo[active] + hi[active])
        F = model.cdf(mid)
        x[active] = mid
        err = F - flat[active]
        done = (np.abs(err) <= tol) | (mid == lo[active]) | (mid == hi[active])
        upper = err > 0
        hi[active[upper]] = mid[upper]
        lo[active[~upper]] = mid[~upper]
        active = active[~done]
        if active.size == 0:
            break
    return x.reshape(u_arr.shape) if u_arr.ndim else float(x[0])


# --------------------------------------------------------------------------
# marginal banks

@dataclass(frozen=True, eq=False)
class MarginalBank:
    """KDE marginals indexed by ``(sensor, feature, label)``, all zero-based."""

    models: Mapping
    n_sensors: int
    n_features: int
    description: str = ""

    def __post_init__(self):
        for n in range(self.n_sensors):
            for k in range(self.n_features):
                for h in (ALICE, EVE):
                    if (n, k, h) not in self.models:
                        raise ConfigurationError(f"marginal bank is missing entry (sensor={n}, feature={k}, label={h})")

    def __getitem__(self, key) -> KdeModel:
        return self.models[key]


def fit_marginal_bank(series: Mapping, bandwidth_rule="silverman", description="") -> MarginalBank:
    """Fit one KDE per ``(sensor, feature, label) -> values`` series."""
    if not series:
        raise EmptyInputError("no series to fit")
    models = {key: fit_kde(values, bandwidth_rule) for key, values in series.items()}
    n_sensors = 1 + max(key[0] for key in models)
    n_features = 1 + max(key[1] for key in models)
    return MarginalBank(models, n_sensors, n_features, description)


def _parse_label(value, where):
    v = str(value).strip().lower()
    if v in ("1", "alice", "a", "legitimate"):
        return ALICE
    if v in ("0", "eve", "e", "attacker"):
        return EVE
    raise ConfigurationError(f"{where}: unrecognized class {value!r} (use 1/alice or 0/eve)")


def read_series_csv(path) -> dict:
    """Read measured feature series from CSV.

    Expected columns: ``sensor_id, feature_id, class, value``. Ids are
    1-based in the file and returned zero-based; ``class`` is 1/alice or 0/eve.
    """
    series: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"sensor_id", "feature_id", "class", "value"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"{path}: missing column(s) {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            where = f"{path}:{line}"
            try:
                n = int(row["sensor_id"]) - 1
                k = int(row["feature_id"]) - 1
                value = float(row["value"])
            except ValueError as exc:
                raise ConfigurationError(f"{where}: {exc}") from None
            if n < 0 or k < 0:
                raise ConfigurationError(f"{where}: ids are 1-based")
            series.setdefault((n, k, _parse_label(row["class"], where)), []).append(value)
    return {key: np.asarray(v) for key, v in series.items()}


# --------------------------------------------------------------------------
# reference scenarios

@dataclass(frozen=True)
class ReferenceScenario:
    """Parametric stand-in for measured feature statistics.

    Alice's marginal for (sensor n, feature k) is a two-component Gaussian
    mixture (weights ``mode_weights``) with component spread ``scale`` and mode half-distance
    ``mode_gap * scale``, where ``scale = feature_scales[k] * sensor_gains[n]``.
    Eve's marginal is the same mixture shifted by
    ``separability * shift_signs[n][k] * feature_shifts[k] * scale``.
    Indices cycle when ``N`` or ``K`` exceed the tabulated values.
    """

    feature_scales: tuple = (2.0, 1.0, 0.5, 0.25)
    feature_shifts: tuple = (1.8, 2.2, 2.6, 3.0)
    feature_means: tuple = (10.0, 2.0, 4.0, 1.0)
    sensor_gains: tuple = (1.0, 1.3, 0.8)
    shift_signs: tuple = ((1, 1, -1, 1), (-1, 1, 1, -1), (1, -1, 1, 1))
    mode_gap: float = 3.0
    mode_weights: tuple = (0.6, 0.4)
    separability: float = 1.0
    draws: int = 5000
    seed: int = 20220101

    def mixture_params(self, n, k):
        """Return ``(means_alice, shift, std)`` for sensor ``n``, feature ``k``."""
        scale = self.feature_scales[k % len(self.feature_scales)] * self.sensor_gains[n % len(self.sensor_gains)]
        mean = self.feature_means[k % len(self.feature_means)]
        gap = self.mode_gap * scale
        sign = self.shift_signs[n % len(self.shift_signs)][k % len(self.shift_signs[0])]
        shift = self.separability * sign * self.feature_shifts[k % len(self.feature_shifts)] * scale
        return np.array([mean - gap, mean + gap]), shift, scale


SCENARIOS = {
    "default": ReferenceScenario(),
    "null": ReferenceScenario(separability=0.0),
}


def mixture_draws(means, std, size, rng, weights=None):
    comp = rng.choice(len(means), size=size, p=weights)
    return np.asarray(means)[comp] + std * rng.standard_normal(size)


def reference_marginals(scenario_id="default", N=3, K=4, separability=None,
                        bandwidth_rule="silverman") -> MarginalBank:
    """Deterministic marginal bank for a named reference scenario.

    Every marginal is a KDE fitted to ``scenario.draws`` draws from the
    scenario's parametric mixture, so datasets go through the same
    fit-then-sample path as measured series.
    """
    try:
        scenario = SCENARIOS[scenario_id]
    except (KeyError, TypeError):
        raise ConfigurationError(f"unknown scenario {scenario_id!r}; known: {sorted(SCENARIOS)}") from None
    if separability is not None:
        scenario = ReferenceScenario(**{**scenario.__dict__, "separability": float(separability)})
    if N < 1 or K < 1:
        raise ConfigurationError("N and K must be positive")
    models = {}
    for n in range(N):
        for k in range(K):
            means, shift, std = scenario.mixture_params(n, k)
            rng = np.random.default_rng([scenario.seed, n, k])
            w = scenario.mode_weights
            base = mixture_draws(means, std, scenario.draws, rng, w)
            models[(n, k, ALICE)] = fit_kde(base, bandwidth_rule)
            eve = mixture_draws(means, std, scenario.draws, rng, w) + shift
            models[(n, k, EVE)] = fit_kde(eve, bandwidth_rule)
    return MarginalBank(models, N, K, f"reference:{scenario_id}")


# --------------------------------------------------------------------------
# copula sampling and datasets

@dataclass(frozen=True)
class CopulaSpec:
    alpha: float
    N: int
    K: int

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if self.N < 1 or self.K < 1:
            raise ConfigurationError("N and K must be positive")

    def covariance(self):
        """Covariance of the N sensors' values of one feature."""
        return (1 - self.alpha) * np.eye(self.N) + self.alpha * np.ones((self.N, self.N))


def sample_copula_matrix(spec: CopulaSpec, rng, size=None) -> np.ndarray:
    """Draw ``N x K`` Gaussian matrices (a stack of ``size`` when given).

    Uses the shared-factor construction
    ``v[n, k] = sqrt(alpha) * z[k] + sqrt(1 - alpha) * w[n, k]``: unit
    variances, correlation ``alpha`` between sensors for the same feature,
    independent features.
    """
    shape = (1 if size is None else size,)
    z = rng.standard_normal(shape + (1, spec.K))
    w = rng.standard_normal(shape + (spec.N, spec.K))
    v = np.sqrt(spec.alpha) * z + np.sqrt(1.0 - spec.alpha) * w
    return v[0] if size is None else v


@dataclass(eq=False)
class FeatureDataset:
    """Rows of ``N x K`` feature matrices with binary labels (1 Alice, 0 Eve)."""

    X: np.ndarray
    y: np.ndarray
    alpha: float = float("nan")
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.X.ndim != 3:
            raise InputShapeError(f"X must have shape (rows, N, K), got {self.X.shape}")
        if self.y.shape != (len(self.X),):
            raise InputShapeError("y must hold one label per row")
        if not np.all(np.isfinite(self.X)):
            raise DomainError("features must be finite")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise DomainError("labels must be 0 or 1")

    def __len__(self):
        return len(self.y)

    @property
    def n_sensors(self):
        return self.X.shape[1]

    @property
    def n_features(self):
        return self.X.shape[2]

    def subset(self, idx) -> "FeatureDataset":
        return FeatureDataset(self.X[idx], self.y[idx], self.alpha, self.provenance)

    def sensor(self, n):
        """Single-sensor view: ``(rows x K features, labels)``."""
        return self.X[:, n, :], self.y

    def column_names(self):
        return [f"s{n + 1}_f{k + 1}" for n in range(self.n_sensors) for k in range(self.n_features)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names() + ["label"])
            flat = self.X.reshape(len(self), -1)
            for row, label in zip(flat, self.y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])

    @classmethod
    def from_csv(cls, path, alpha=float("nan"), provenance=None):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        if header[-1] != "label":
            raise ConfigurationError(f"{path}: last column must be 'label'")
        N = K = 0
        for name in header[:-1]:
            s, f = name.split("_")
            N, K = max(N, int(s[1:])), max(K, int(f[1:]))
        data = np.array([[float(v) for v in r[:-1]] for r in rows])
        y = np.array([int(r[-1]) for r in rows])
        return cls(data.reshape(len(rows), N, K), y, alpha, provenance or str(path))


def generate_dataset(bank: MarginalBank, spec: CopulaSpec, count_per_class: int, rng,
                     method="table") -> FeatureDataset:
    """Draw ``count_per_class`` Alice rows followed by as many Eve rows.

    ``method="table"`` inverts each marginal through a dense exact CDF table;
    ``"bisect"`` uses :func:`kde_inverse_cdf` directly (much slower).
    """
    if (spec.N, spec.K) != (bank.n_sensors, bank.n_features):
        raise ConfigurationError(
            f"copula is {spec.N}x{spec.K} but the marginal bank is {bank.n_sensors}x{bank.n_features}")
    if count_per_class < 1:
        raise EmptyInputError("count_per_class must be positive")
    blocks, labels = [], []
    for h in (ALICE, EVE):
        u = ndtr(sample_copula_matrix(spec, rng, size=count_per_class))
        x = np.empty_like(u)
        for n in range(spec.N):
            for k in range(spec.K):
                model = bank[(n, k, h)]
                if method == "table":
                    x[:, n, k] = model.ppf_table(u[:, n, k])
                elif method == "bisect":
                    uu = np.clip(u[:, n, k], 1e-300, 1 - 2 ** -53)
                    x[:, n, k] = kde_inverse_cdf(model, uu)
                else:
                    raise ConfigurationError(f"unknown inversion method {method!r}")
        blocks.append(x)
        labels.append(np.full(count_per_class, h))
    return FeatureDataset(np.concatenate(blocks), np.concatenate(labels), spec.alpha,
                          f"{bank.description} alpha={spec.alpha!r} n={count_per_class}")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.15
    test_frac: float = 0.25

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be non-negative and sum to 1, got {fracs}")


def split_dataset(ds: FeatureDataset, split: SplitSpec, rng):
    """Stratified shuffled split into ``(train, val, test)``."""
    if len(ds) == 0:
        raise EmptyInputError("cannot split an empty dataset")
    parts = ([], [], [])
    for h in (ALICE, EVE):
        idx = np.flatnonzero(ds.y == h)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(split.train_frac * len(idx)))
        n_va = min(int(round(split.val_frac * len(idx))), len(idx) - n_tr)
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    out = []
    for chunks in parts:
        idx = np.concatenate(chunks)
        out.append(ds.subset(idx[rng.permutation(len(idx))]))
    return tuple(out)
