"""Complex angular central Gaussian mixture model (cACGMM) for mask estimation.

Each frequency bin is modelled independently::

    p(y_tf) = sum_k pi_kf * cACG(y_tf / |y_tf|; B_kf)

Class 0 is the noise class, classes ``1..K`` are speakers. The E-step
posteriors are the time-frequency masks. An optional activity matrix (for
example from a diarization system) multiplies the speaker priors frame by
frame, which forces the masks of inactive speakers to exactly zero (guided
source separation).
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .errors import InvalidInputError
from .stft import as_tfd

logger = logging.getLogger(__name__)

LOADING = 1e-10
LOW_ENERGY = 1e-12
INIT_PERTURBATION = 0.1


@dataclass
class MixtureModel:
    weights: np.ndarray  # (K+1, F)
    shapes: np.ndarray  # (K+1, F, D, D)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_bins(self) -> int:
        return self.weights.shape[1]

    @property
    def num_channels(self) -> int:
        return self.shapes.shape[-1]


def log_normalizer(num_channels: int) -> float:
    """Log of the cACG normalizing constant ``Gamma(D) / (2 pi^D)`` on the unit sphere."""
    return float(gammaln(num_channels) - np.log(2.0) - num_channels * np.log(np.pi))


def _load(b: np.ndarray, loading: float = LOADING) -> np.ndarray:
    d = b.shape[-1]
    tr = np.trace(b, axis1=-2, axis2=-1).real
    return b + (loading * tr / d)[..., None, None] * np.eye(d)


def _inverse_and_logdet(b: np.ndarray):
    loaded = _load(b)
    inv = np.linalg.inv(loaded)
    _, logdet = np.linalg.slogdet(loaded)
    return inv, logdet.real


def class_log_density(y, b) -> float:
    """cACG log density of the direction of ``y`` under shape matrix ``b``.

    ``-log det(B) - D log(u^H B^-1 u) + log_normalizer(D)`` with ``u = y/|y|``.
    A zero vector has no direction; it gets the isotropic (``B = I``) value.
    """
    y = np.asarray(y, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d = y.shape[-1]
    norm = np.linalg.norm(y)
    if norm == 0:
        return log_normalizer(d)
    if np.linalg.cond(b) > 1e10:
        warnings.warn("near-singular shape matrix, diagonal loading applied", RuntimeWarning)
    inv, logdet = _inverse_and_logdet(b)
    u = y / norm
    quad = np.real(np.conj(u) @ inv @ u)
    return float(log_normalizer(d) - logdet - d * np.log(quad))


def _normalize_observations(y: np.ndarray):
    """Unit-norm observations and a mask of bins with usable energy."""
    norm = np.linalg.norm(y, axis=-1)
    valid = norm > LOW_ENERGY * max(float(np.mean(norm)), np.finfo(float).tiny)
    safe = np.where(valid, norm, 1.0)
    return np.where(valid[..., None], y / safe[..., None], 0.0), valid


def _check_guide(guide, num_speakers, num_frames) -> np.ndarray | None:
    if guide is None:
        return None
    guide = np.asarray(guide, dtype=float)
    if guide.shape != (num_speakers, num_frames):
        raise InvalidInputError(
            f"activity shape {guide.shape} does not match ({num_speakers}, {num_frames})"
        )
    if np.any(guide < 0) or np.any(guide > 1):
        raise InvalidInputError("activities must lie in [0, 1]")
    return guide


def _posteriors(u, valid, model: MixtureModel, guide):
    """Masks ``(C, T, F)``, total log-likelihood and quadratic forms ``(C, T, F)``."""
    c, _, d = model.num_classes, model.num_bins, model.num_channels
    inv, logdet = _inverse_and_logdet(model.shapes)
    quad = np.einsum("tfd,cfde,tfe->ctf", u.conj(), inv, u).real
    quad = np.maximum(quad, np.finfo(float).tiny)
    log_p = log_normalizer(d) - logdet[:, None, :] - d * np.log(quad)
    # bins without a direction: isotropic density for every class
    log_p = np.where(valid[None], log_p, log_normalizer(d))
    with np.errstate(divide="ignore"):
        logits = np.log(model.weights)[:, None, :] + log_p
        if guide is not None:
            prior = np.concatenate([np.ones((1, guide.shape[1])), guide])
            logits = logits + np.log(prior)[:, :, None]
    lse = np.logaddexp.reduce(logits, axis=0)
    dead = ~np.isfinite(lse)
    if dead.any():
        # every class has zero prior here; hand the bin to the noise class
        logits[:, dead] = -np.inf
        logits[0, dead] = 0.0
        lse = np.where(dead, 0.0, lse)
    masks = np.exp(logits - lse[None])
    return masks, float(np.sum(lse[~dead])), quad


def e_step(spec, model: MixtureModel, guide=None) -> np.ndarray:
    """Class posteriors ``(K+1, T, F)``; with ``guide`` (``(K, T)``) speaker priors are gated per frame."""
    y = as_tfd(spec)
    if y.shape[1:] != (model.num_bins, model.num_channels):
        raise InvalidInputError("model dimensions do not match the spectrogram")
    guide = _check_guide(guide, model.num_classes - 1, y.shape[0])
    u, valid = _normalize_observations(y)
    return _posteriors(u, valid, model, guide)[0]


def log_likelihood(spec, model: MixtureModel, guide=None) -> float:
    y = as_tfd(spec)
    guide = _check_guide(guide, model.num_classes - 1, y.shape[0])
    u, valid = _normalize_observations(y)
    return _posteriors(u, valid, model, guide)[1]


def _m_step(u, valid, masks, quad) -> MixtureModel:
    c, _, num_bins = masks.shape
    d = u.shape[-1]
    weights = masks.mean(axis=1)
    w = masks * valid[None]
    mass = w.sum(axis=1)  # (C, F)
    scatter = np.einsum("ctf,tfd,tfe->cfde", w / quad, u, u.conj())
    empty = mass <= 0
    if empty.any():
        ks, fs = np.nonzero(empty)
        warnings.warn(
            f"{len(ks)} class/frequency pairs have zero mask mass; shape reset to identity",
            RuntimeWarning,
        )
    shapes = d * scatter / np.where(empty, 1.0, mass)[..., None, None]
    shapes[empty] = np.eye(d)
    shapes = 0.5 * (shapes + np.conj(np.swapaxes(shapes, -1, -2)))
    shapes = _load(shapes)
    tr = np.trace(shapes, axis1=-2, axis2=-1).real
    shapes *= (d / tr)[..., None, None]
    return MixtureModel(weights, shapes)


def m_step(spec, masks, model: MixtureModel | None = None) -> MixtureModel:
    """Update mixture weights and shape matrices from masks.

    The shape update is the weighted cACG fixed point
    ``B = D * sum_t m (u u^H) / (u^H B_old^-1 u) / sum_t m``, evaluated with
    ``model`` as ``B_old`` (identity when ``model`` is None), then
    Hermitian-symmetrized, diagonally loaded and scaled to trace ``D``.
    """
    y = as_tfd(spec)
    masks = np.asarray(masks, dtype=float)
    if masks.ndim != 3 or masks.shape[1:] != y.shape[:2]:
        raise InvalidInputError(f"masks shape {masks.shape} does not match spectrogram {y.shape}")
    u, valid = _normalize_observations(y)
    if model is None:
        quad = np.ones(masks.shape)
    else:
        inv, _ = _inverse_and_logdet(model.shapes)
        quad = np.einsum("tfd,cfde,tfe->ctf", u.conj(), inv, u).real
        quad = np.maximum(quad, np.finfo(float).tiny)
    return _m_step(u, valid, masks, quad)


def init_model(num_classes, num_bins, num_channels, rng) -> MixtureModel:
    """Uniform weights and ``B = I + 0.1 H`` with a random unit-norm Hermitian ``H``."""
    shape = (num_classes, num_bins, num_channels, num_channels)
    h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    h = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    h /= np.linalg.norm(h, ord=2, axis=(-2, -1))[..., None, None]
    b = np.eye(num_channels) + INIT_PERTURBATION * h
    b *= (num_channels / np.trace(b, axis1=-2, axis2=-1).real)[..., None, None]
    return MixtureModel(np.full((num_classes, num_bins), 1.0 / num_classes), b)


def run_em(spec, num_classes: int, iterations: int = 20, guide=None, rng_seed=0, model=None):
    """Fit the mixture by EM.

    Returns ``(masks, model, log_likelihood_trace)``. The trace holds the
    total log-likelihood after every M-step; the masks are the posteriors
    of the final model.
    """
    y = as_tfd(spec)
    num_frames, num_bins, d = y.shape
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    if num_classes < 2:
        raise InvalidInputError("num_classes must be >= 2")
    if num_frames < num_classes:
        raise InvalidInputError(f"{num_frames} frames are fewer than {num_classes} classes")
    guide = _check_guide(guide, num_classes - 1, num_frames)
    if model is None:
        model = init_model(num_classes, num_bins, d, np.random.default_rng(rng_seed))
    u, valid = _normalize_observations(y)
    masks, _, quad = _posteriors(u, valid, model, guide)
    trace = []
    for _ in range(iterations):
        model = _m_step(u, valid, masks, quad)
        masks, ll, quad = _posteriors(u, valid, model, guide)
        trace.append(ll)
    logger.debug("EM log-likelihood trace: %s", trace)
    return masks, model, trace


def permutation_alignment(masks) -> np.ndarray:
    """Per-frequency speaker permutations ``(F, K)`` that make activity profiles consistent.

    Frequencies are visited in ascending order; each is matched to the running
    average of the already aligned (unit-normalized) temporal profiles by
    cosine similarity. Ties keep the identity. Class 0 (noise) is untouched,
    so the returned permutations index speaker classes ``1..K`` as ``0..K-1``.
    """
    masks = np.asarray(masks, dtype=float)
    speakers = masks[1:]  # (K, T, F)
    k, _, num_bins = speakers.shape
    perms = np.tile(np.arange(k), (num_bins, 1))
    if k < 2:
        return perms
    norms = np.linalg.norm(speakers, axis=1, keepdims=True)
    profiles = np.where(norms > 0, speakers / np.where(norms > 0, norms, 1.0), 0.0)
    reference = profiles[:, :, 0].copy()
    identity = np.arange(k)
    for f in range(1, num_bins):
        ref_norm = np.linalg.norm(reference, axis=1, keepdims=True)
        ref = np.where(ref_norm > 0, reference / np.where(ref_norm > 0, ref_norm, 1.0), 0.0)
        score = ref @ profiles[:, :, f].T  # score[i, j]: reference class i vs. bin class j
        if k <= 6:
            best, best_score = identity, np.trace(score)
            for p in itertools.permutations(range(k)):
                s = score[identity, p].sum()
                if s > best_score + 1e-12:
                    best, best_score = np.array(p), s
        else:
            _, best = linear_sum_assignment(-score)
            if score[identity, best].sum() <= np.trace(score) + 1e-12:
                best = identity
        perms[f] = best
        reference += profiles[best, :, f]
    return perms


def apply_permutations(masks, perms) -> np.ndarray:
    masks = np.asarray(masks, dtype=float)
    out = masks.copy()
    for f, p in enumerate(perms):
        out[1:, :, f] = masks[1 + np.asarray(p), :, f]
    return out


def align_permutations(masks) -> np.ndarray:
    """Resolve the frequency permutation ambiguity of speaker masks."""
    return apply_permutations(masks, permutation_alignment(masks))


def best_class_permutation(estimate, reference) -> tuple:
    """Global speaker permutation mapping estimated classes to reference classes.

    Maximizes the summed overlap ``sum m_est * m_ref``; noise stays at index 0.
    """
    est = np.asarray(estimate)[1:].reshape(np.shape(estimate)[0] - 1, -1)
    ref = np.asarray(reference)[1:].reshape(np.shape(reference)[0] - 1, -1)
    _, cols = linear_sum_assignment(-(ref @ est.T))
    return (0,) + tuple(int(c) + 1 for c in cols)
