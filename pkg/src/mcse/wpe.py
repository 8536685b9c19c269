"""Weighted prediction error (WPE) dereverberation.

Late reverberation is predicted from delayed past frames with a multichannel
linear filter and subtracted::

    x_hat[t] = y[t] - G^H y_tilde[t],   y_tilde[t] = [y[t-delay]; ...; y[t-delay-taps+1]]

The filter ``G`` (``(D*taps, D)`` per frequency) and the time-varying source
variance ``lambda[t, f]`` are estimated alternately, which minimizes
``sum D log(lambda) + |x_hat|^2 / lambda``. All bins are processed at once.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .stft import Spectrogram, as_tfd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WpeConfig:
    delay: int = 3
    taps: int = 10
    iterations: int = 3
    lambda_floor: float = 1e-10
    loading: float = 1e-10

    def __post_init__(self):
        if self.delay < 1:
            raise ConfigurationError("wpe delay must be >= 1")
        if self.taps < 1:
            raise ConfigurationError("wpe taps must be >= 1")
        if self.iterations < 1:
            raise ConfigurationError("wpe iterations must be >= 1")
        if not self.lambda_floor > 0:
            raise ConfigurationError("wpe lambda_floor must be positive")
        if self.loading < 0:
            raise ConfigurationError("wpe loading must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "WpeConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class WpeFilter:
    """Stacked filter ``(F, D*taps, D)``; block ``i`` multiplies ``y[t - delay - i]``."""

    stacked: np.ndarray
    delay: int

    @property
    def taps(self) -> int:
        return self.stacked.shape[1] // self.stacked.shape[2]

    def prediction_matrices(self) -> np.ndarray:
        """Per-tap matrices ``(F, taps, D, D)`` in the form ``y[t] = x[t] + sum_i G_i y[t-delay-i]``."""
        f, dl, d = self.stacked.shape
        blocks = self.stacked.reshape(f, dl // d, d, d)
        return np.conj(np.swapaxes(blocks, -1, -2))

    @classmethod
    def from_prediction_matrices(cls, matrices, delay: int) -> "WpeFilter":
        m = np.asarray(matrices, dtype=complex)
        f, taps, d, _ = m.shape
        return cls(np.conj(np.swapaxes(m, -1, -2)).reshape(f, taps * d, d), delay)


def build_delayed_stack(spec, config: WpeConfig) -> np.ndarray:
    """Delayed past frames ``(T, F, D*taps)``, zero where ``t - delay - i < 0``."""
    y = as_tfd(spec)
    num_frames, num_bins, d = y.shape
    stack = np.zeros((num_frames, num_bins, config.taps, d), dtype=complex)
    for i in range(config.taps):
        lag = config.delay + i
        if lag < num_frames:
            stack[lag:, :, i] = y[: num_frames - lag]
    return stack.reshape(num_frames, num_bins, config.taps * d)


def _check_lambda(lam, shape) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != shape:
        raise InvalidInputError(f"lambda shape {lam.shape} does not match (T, F) = {shape}")
    if not np.all(lam > 0):
        raise InvalidInputError("lambda must be positive")
    return lam


def _solve_filter(stack, y, lam, loading):
    r = np.einsum("tfi,tfj->fij", stack / lam[..., None], np.conj(stack))
    p = np.einsum("tfi,tfd->fid", stack / lam[..., None], np.conj(y))
    n = r.shape[-1]
    tr = np.trace(r, axis1=-2, axis2=-1).real
    r = r + (loading * tr / n)[:, None, None] * np.eye(n)
    g = np.zeros(p.shape, dtype=complex)
    ok = tr > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(r[ok]) if ok.any() else np.zeros(0)
    good = np.isfinite(cond) & (cond < 1 / np.finfo(float).eps)
    idx = np.flatnonzero(ok)[good]
    if len(idx):
        g[idx] = np.linalg.solve(r[idx], p[idx])
    singular = np.flatnonzero(ok)[~good]
    if len(singular):
        warnings.warn(f"WPE normal equations singular at {len(singular)} bins; zero filter used", RuntimeWarning)
    return g


def estimate_filter(spec, lam, config: WpeConfig) -> WpeFilter:
    """Solve the lambda-weighted normal equations ``R G = P`` in every bin."""
    y = as_tfd(spec)
    lam = _check_lambda(lam, y.shape[:2])
    stack = build_delayed_stack(y, config)
    return WpeFilter(_solve_filter(stack, y, lam, config.loading), config.delay)


def _predict(stack, g):
    return np.einsum("fid,tfi->tfd", np.conj(g), stack)


def apply_filter(spec, wpe_filter: WpeFilter, config: WpeConfig):
    """``y - G^H y_tilde``; returns the same container type as ``spec``."""
    y = as_tfd(spec)
    if wpe_filter.delay != config.delay or wpe_filter.stacked.shape != (
        y.shape[1], config.taps * y.shape[2], y.shape[2]
    ):
        raise InvalidInputError("filter does not match the spectrogram and config")
    out = y - _predict(build_delayed_stack(y, config), wpe_filter.stacked)
    return spec.with_data(out) if isinstance(spec, Spectrogram) else out


def update_lambda(dereverbed, config: WpeConfig) -> np.ndarray:
    """Channel-averaged power, floored at ``config.lambda_floor``."""
    x = as_tfd(dereverbed)
    return np.maximum(config.lambda_floor, np.mean(np.abs(x) ** 2, axis=-1))


def objective(dereverbed, lam) -> float:
    """``sum_{t,f} D log(lambda) + |x_hat|^2 / lambda``."""
    x = as_tfd(dereverbed)
    d = x.shape[-1]
    return float(np.sum(d * np.log(lam) + np.sum(np.abs(x) ** 2, axis=-1) / lam))


def run_wpe(spec, config: WpeConfig | None = None):
    """Iterative WPE. Returns ``(dereverbed, filter, objective_trace)``.

    lambda starts from the observed channel-averaged power; each iteration
    re-estimates the filter, applies it and updates lambda. The trace holds
    the objective after every iteration.
    """
    config = config or WpeConfig()
    y = as_tfd(spec)
    if y.shape[0] <= config.delay:
        raise InvalidInputError(f"{y.shape[0]} frames do not exceed the prediction delay {config.delay}")
    stack = build_delayed_stack(y, config)
    lam = update_lambda(y, config)
    trace = []
    for _ in range(config.iterations):
        g = _solve_filter(stack, y, lam, config.loading)
        x = y - _predict(stack, g)
        lam = update_lambda(x, config)
        trace.append(objective(x, lam))
    logger.debug("WPE objective trace: %s", trace)
    out = spec.with_data(x) if isinstance(spec, Spectrogram) else x
    return out, WpeFilter(g, config.delay), trace
