"""MVDR beamforming from speech and noise spatial covariance matrices.

Weights follow the reference-channel formulation
``w = (Phi_n^-1 Phi_x / tr(Phi_n^-1 Phi_x)) u_ref`` and are applied as
``w^H y``, which passes the target's image at the reference microphone
undistorted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError
from .scm import condition
from .stft import Spectrogram, as_tfd

DEFAULT_LOADING = 1e-6
MAX_CONDITION = 1e12


@dataclass
class BeamformerWeights:
    """Weights ``(F, D)`` or, for time-varying SCMs, ``(T, F, D)``."""

    weights: np.ndarray
    reference_channel: int = 0
    failed: np.ndarray | None = None

    @property
    def time_varying(self) -> bool:
        return self.weights.ndim == 3


def _solve_mvdr(phi_x, phi_n, reference):
    """Batched MVDR weights and a mask of entries where the solve is unusable."""
    d = phi_x.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(phi_n)
    bad = ~np.isfinite(cond) | (cond > MAX_CONDITION)
    safe_n = np.where(bad[..., None, None], np.eye(d), phi_n)
    num = np.linalg.solve(safe_n, phi_x)
    tr = np.trace(num, axis1=-2, axis2=-1)
    scale = np.max(np.abs(num), axis=(-2, -1))
    bad |= ~np.isfinite(tr) | (np.abs(tr) <= 1e-14 * np.maximum(scale, np.finfo(float).tiny))
    w = num[..., :, reference] / np.where(bad, 1.0, tr)[..., None]
    w[bad] = 0.0
    return w, bad


def mvdr_weights(phi_x, phi_n, reference: int = 0, loading: float = DEFAULT_LOADING, strict=True):
    """MVDR weights for one or many frequencies (leading batch dimensions).

    Entries whose noise SCM is ill-conditioned are retried after diagonal
    loading. If ``strict`` an entry that still fails raises
    :class:`NumericalError`; otherwise ``(weights, failed)`` is returned with
    zero weights where ``failed`` is set.
    """
    phi_x = np.asarray(phi_x, dtype=complex)
    phi_n = np.asarray(phi_n, dtype=complex)
    if phi_x.shape != phi_n.shape or phi_x.shape[-1] != phi_x.shape[-2]:
        raise InvalidInputError(f"SCM shapes {phi_x.shape} and {phi_n.shape} do not match")
    d = phi_x.shape[-1]
    if not 0 <= reference < d:
        raise InvalidInputError(f"reference channel {reference} out of range for {d} channels")
    batch = phi_x.shape[:-2]
    phi_x = phi_x.reshape(-1, d, d)
    phi_n = phi_n.reshape(-1, d, d)
    w, failed = _solve_mvdr(phi_x, phi_n, reference)
    if failed.any():
        retry_w, retry_failed = _solve_mvdr(phi_x[failed], condition(phi_n[failed], loading), reference)
        w[failed] = retry_w
        failed[failed] = retry_failed
    w = w.reshape(batch + (d,))
    failed = failed.reshape(batch)
    if strict:
        if failed.any():
            where = np.argwhere(failed)
            raise NumericalError(f"MVDR solve failed at {len(where)} entries, first at {where[0].tolist()}")
        return w
    return w, failed


def _fallback_previous_frame(w, failed, reference):
    """Replace failed per-frame weights with the last good frame (selector before any)."""
    selector = np.zeros(w.shape[-1], dtype=complex)
    selector[reference] = 1.0
    for t in range(w.shape[0]):
        bad = failed[t]
        if bad.any():
            w[t, bad] = w[t - 1, bad] if t > 0 else selector
    return w


def beamformer_weights(phi_x, phi_n, reference: int = 0, loading: float = DEFAULT_LOADING) -> BeamformerWeights:
    """Weights for ``(F, D, D)`` or time-varying ``(T, F, D, D)`` SCMs with fallbacks.

    Frequencies where the solve fails pass the reference channel through
    (time-invariant case) or reuse the previous frame's weights
    (time-varying case).
    """
    phi_x = np.asarray(phi_x)
    w, failed = mvdr_weights(phi_x, phi_n, reference, loading, strict=False)
    if failed.any():
        warnings.warn(f"MVDR failed at {int(failed.sum())} entries; using fallback weights", RuntimeWarning)
        if phi_x.ndim == 4:
            w = _fallback_previous_frame(w, failed, reference)
        else:
            w[failed] = 0.0
            w[failed, reference] = 1.0
    return BeamformerWeights(w, reference, failed)


def apply(spec, weights) -> Spectrogram | np.ndarray:
    """Single-channel output ``w^H y``; returns the same container type as ``spec``."""
    y = as_tfd(spec)
    w = weights.weights if isinstance(weights, BeamformerWeights) else np.asarray(weights)
    if w.shape[-1] != y.shape[-1] or w.shape[-2] != y.shape[1]:
        raise InvalidInputError(f"weights {w.shape} do not match spectrogram {y.shape}")
    if w.ndim == 3:
        if w.shape[0] != y.shape[0]:
            raise InvalidInputError("time-varying weights must cover every frame")
        out = np.einsum("tfd,tfd->tf", np.conj(w), y)
    else:
        out = np.einsum("fd,tfd->tf", np.conj(w), y)
    if isinstance(spec, Spectrogram):
        return spec.with_data(out[..., None])
    return out[..., None]


def select_reference(phi_x, phi_n) -> int:
    """Channel with the largest summed SNR proxy ``sum Phi_x[d,d] / Phi_n[d,d]``.

    Leading dimensions (speakers, frequencies) are summed over. Channels with
    a zero noise diagonal anywhere are excluded; ties go to the lowest index.
    """
    sx = np.real(np.diagonal(np.asarray(phi_x), axis1=-2, axis2=-1))
    sn = np.real(np.diagonal(np.asarray(phi_n), axis1=-2, axis2=-1))
    d = sx.shape[-1]
    sx = sx.reshape(-1, d)
    sn = sn.reshape(-1, d)
    usable = np.all(sn > 0, axis=0)
    if not usable.any():
        warnings.warn("every channel has a zero noise diagonal; using channel 0", RuntimeWarning)
        return 0
    ratio = np.where(sn > 0, sx / np.where(sn > 0, sn, 1.0), 0.0).sum(axis=0)
    ratio[~usable] = -np.inf
    return int(np.argmax(ratio))
