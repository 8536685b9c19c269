"""Evaluation against simulator ground truth: SI-SDR, SNR gain and early-to-late ratio."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError

DB_CAP = 100.0
MAX_PERMUTATION_SOURCES = 6


@dataclass
class EvalReport:
    source: int
    estimate: int
    si_sdr_db: float
    snr_gain_db: float | None = None
    srr_db: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(estimate, reference):
    est = np.asarray(estimate).ravel()
    ref = np.asarray(reference).ravel()
    if est.shape != ref.shape:
        raise InvalidInputError(f"estimate length {est.size} != reference length {ref.size}")
    if not np.any(ref):
        raise InvalidInputError("reference signal is all zeros")
    return est, ref


def _ratio_db(signal_energy, residual_energy) -> float:
    if residual_energy <= 0:
        return DB_CAP
    if signal_energy <= 0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(signal_energy / residual_energy), -DB_CAP, DB_CAP))


def _projection(est, ref):
    alpha = np.vdot(ref, est) / np.vdot(ref, ref).real
    target = alpha * ref
    return target, est - target


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, clipped to +-100 dB."""
    est, ref = _pair(estimate, reference)
    target, residual = _projection(est, ref)
    err = np.vdot(residual, residual).real
    # residual at rounding level of the target counts as a perfect match
    if err <= (1e-24 * np.vdot(target, target).real):
        return DB_CAP
    return _ratio_db(np.vdot(target, target).real, err)


def srr(estimate, early_reference, late_reference=None) -> float:
    """Energy of the projection onto the early reference over the residual, in dB.

    ``late_reference`` is only checked for shape; the residual already holds
    whatever late reverberation remains.
    """
    est, early = _pair(estimate, early_reference)
    if late_reference is not None and np.size(late_reference) != est.size:
        raise InvalidInputError("late reference length does not match the estimate")
    target, residual = _projection(est, early)
    return _ratio_db(np.vdot(target, target).real, np.vdot(residual, residual).real)


def snr_gain(output_signal, output_noise, input_signal, input_noise) -> float:
    """Output SNR minus input SNR in dB, from separately processed signal and noise parts."""
    def snr(s, n):
        return _ratio_db(np.sum(np.abs(s) ** 2), np.sum(np.abs(n) ** 2))

    return snr(output_signal, output_noise) - snr(input_signal, input_noise)


def best_permutation_eval(estimates, references) -> list:
    """Evaluate every assignment of estimates to references; keep the best mean SI-SDR.

    Returns one :class:`EvalReport` per reference, ordered by reference index.
    """
    estimates = [np.asarray(e) for e in estimates]
    references = [np.asarray(r) for r in references]
    k = len(references)
    if len(estimates) != k:
        raise InvalidInputError(f"{len(estimates)} estimates for {k} references")
    if k > MAX_PERMUTATION_SOURCES:
        raise InvalidInputError(f"exhaustive permutation search is limited to {MAX_PERMUTATION_SOURCES} sources")
    scores = np.array([[si_sdr(e, r) for e in estimates] for r in references])  # [ref, est]
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(k)):
        score = scores[np.arange(k), list(perm)].mean()
        if score > best_score:
            best, best_score = perm, score
    return [EvalReport(source=i, estimate=int(j), si_sdr_db=float(scores[i, j])) for i, j in enumerate(best)]
