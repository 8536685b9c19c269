"""Spatial covariance matrices (SCMs) from time-frequency masks.

Array conventions: masks are ``(C, T, F)``, instantaneous SCMs ``(C, T, F, D, D)``,
block SCMs ``(C, F, D, D)`` and time-varying SCMs ``(C, T, F, D, D)``.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import InvalidInputError
from .stft import as_tfd

ZERO_MASS_FLOOR = 1e-10


def _hermitian(phi: np.ndarray) -> np.ndarray:
    return 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))


def _check_masks(y: np.ndarray, masks) -> np.ndarray:
    masks = np.asarray(masks, dtype=float)
    if masks.ndim == 2:
        masks = masks[None]
    if masks.ndim != 3 or masks.shape[1:] != y.shape[:2]:
        raise InvalidInputError(f"masks shape {masks.shape} does not match spectrogram {y.shape}")
    return masks


def instantaneous_scm(spec, masks) -> np.ndarray:
    """Rank-1 mask-weighted outer products ``m[k,t,f] * y y^H``, shape ``(C, T, F, D, D)``."""
    y = as_tfd(spec)
    masks = _check_masks(y, masks)
    outer = y[..., :, None] * np.conj(y[..., None, :])
    return masks[..., None, None] * outer[None]


def block_scm(spec, masks) -> np.ndarray:
    """Mask-weighted average ``sum_t m y y^H / sum_t m`` per class and frequency, ``(C, F, D, D)``.

    A class with zero mask mass at some frequency gets ``1e-10 * I`` there,
    with a warning.
    """
    y = as_tfd(spec)
    masks = _check_masks(y, masks)
    d = y.shape[-1]
    phi = np.einsum("ctf,tfd,tfe->cfde", masks, y, np.conj(y))
    mass = masks.sum(axis=1)
    empty = mass <= 0
    if empty.any():
        warnings.warn(
            f"{int(empty.sum())} class/frequency pairs have zero mask mass; "
            f"using {ZERO_MASS_FLOOR:g} * I",
            RuntimeWarning,
        )
    phi = phi / np.where(empty, 1.0, mass)[..., None, None]
    phi[empty] = ZERO_MASS_FLOOR * np.eye(d)
    return _hermitian(phi)


def _check_iscm(iscm) -> np.ndarray:
    iscm = np.asarray(iscm)
    if iscm.ndim != 5 or iscm.shape[-1] != iscm.shape[-2]:
        raise InvalidInputError(f"expected ISCMs (C, T, F, D, D), got shape {iscm.shape}")
    return iscm


def recursive_scm(iscm, beta: float) -> np.ndarray:
    """First-order recursion ``phi[t] = beta * phi[t-1] + psi[t]`` with ``phi[0] = psi[0]``.

    Un-normalized: the result grows with accumulated mask mass. MVDR weights
    are invariant to that scale.
    """
    iscm = _check_iscm(iscm)
    if not 0.0 <= beta < 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1), got {beta}")
    out = np.empty_like(iscm)
    out[:, 0] = iscm[:, 0]
    for t in range(1, iscm.shape[1]):
        out[:, t] = beta * out[:, t - 1] + iscm[:, t]
    return out


def weighted_scm(iscm, weights) -> np.ndarray:
    """General accumulation ``phi[k,t,f] = sum_t' c[t,t'] psi[k,t',f]``.

    ``weights`` may be ``(T, T)`` (shared), ``(C, T, T)`` (per class) or
    ``(C, F, T, T)`` (per class and frequency). The per-frequency form is
    what reproduces mask-normalized block averaging exactly.
    """
    iscm = _check_iscm(iscm)
    c, t_len, num_bins = iscm.shape[:3]
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise InvalidInputError("weights must be non-negative")
    if w.shape == (t_len, t_len):
        return np.einsum("st,ctfde->csfde", w, iscm)
    if w.shape == (c, t_len, t_len):
        return np.einsum("cst,ctfde->csfde", w, iscm)
    if w.shape == (c, num_bins, t_len, t_len):
        return np.einsum("cfst,ctfde->csfde", w, iscm)
    raise InvalidInputError(
        f"weights shape {w.shape} must be (T, T), (C, T, T) or (C, F, T, T) "
        f"with C={c}, F={num_bins}, T={t_len}"
    )


def recursive_weights(num_frames: int, beta: float) -> np.ndarray:
    """Weight profile ``beta**(t - t')`` for ``t' <= t``, the closed form of :func:`recursive_scm`."""
    t = np.arange(num_frames)
    lag = t[:, None] - t[None, :]
    return np.where(lag >= 0, float(beta) ** np.maximum(lag, 0), 0.0)


def block_weights(masks) -> np.ndarray:
    """Per-class, per-frequency profile that makes :func:`weighted_scm` equal :func:`block_scm`.

    Every row is ``1 / sum_t m[k,t,f]``; the mask itself already sits in the ISCMs.
    Shape ``(C, F, T, T)``.
    """
    masks = np.asarray(masks, dtype=float)
    c, t_len, _ = masks.shape
    mass = masks.sum(axis=1)
    inv = np.where(mass > 0, 1.0 / np.where(mass > 0, mass, 1.0), 0.0)
    return np.broadcast_to(inv[:, :, None, None], inv.shape + (t_len, t_len)).copy()


def condition(scm, loading: float) -> np.ndarray:
    """Diagonal loading ``phi + loading * trace(phi) / D * I``."""
    if loading < 0:
        raise InvalidInputError("loading must be non-negative")
    phi = np.asarray(scm)
    d = phi.shape[-1]
    tr = np.trace(phi, axis1=-2, axis2=-1).real
    return phi + (loading * tr / d)[..., None, None] * np.eye(d)
