"""Enhancement chain: WPE -> masks (guided EM or external) -> SCMs -> MVDR -> inverse STFT."""

from __future__ import annotations

import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beamform import DEFAULT_LOADING, apply, beamformer_weights, select_reference
from .errors import ConfigurationError, McseError
from .metrics import best_permutation_eval, si_sdr
from .scm import block_scm, instantaneous_scm, recursive_scm, weighted_scm
from .spatial_mixture import align_permutations, run_em
from .stft import MultiChannelSignal, Spectrogram, StftConfig, analyze, synthesize
from .wpe import WpeConfig, run_wpe

logger = logging.getLogger(__name__)

SCM_MODES = ("block", "recursive", "weighted")


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    wpe: WpeConfig | None = field(default_factory=WpeConfig)
    em: dict | None = None
    guide_path: str | None = None
    masks_path: str | None = None
    scm_mode: str = "block"
    beta: float = 0.95
    weights_path: str | None = None
    reference: int | str = "auto"
    beamform: bool = True
    loading: float = DEFAULT_LOADING
    outputs: list = field(default_factory=list)
    references: list = field(default_factory=list)

    def __post_init__(self):
        if (self.em is None) == (self.masks_path is None):
            raise ConfigurationError("exactly one of 'em' and 'masks_path' must be given")
        if self.em is not None:
            self.em = {"iterations": 20, "seed": 0, **self.em}
            if self.em["num_classes"] < 2:
                raise ConfigurationError("em.num_classes must be >= 2")
        if self.scm_mode not in SCM_MODES:
            raise ConfigurationError(f"unknown scm mode {self.scm_mode!r}")
        if self.scm_mode == "weighted" and not self.weights_path:
            raise ConfigurationError("scm mode 'weighted' needs weights_path")
        if self.reference != "auto" and not (isinstance(self.reference, int) and self.reference >= 0):
            raise ConfigurationError("reference must be 'auto' or a channel index")

    @classmethod
    def from_dict(cls, doc: dict, sample_rate_hz: int = 16000) -> "PipelineConfig":
        scm = doc.get("scm", {"mode": "block"})
        wpe = doc.get("wpe", {})
        return cls(
            stft=StftConfig.from_dict({**doc.get("stft", {}), "sample_rate_hz": sample_rate_hz}),
            wpe=None if wpe is None else WpeConfig.from_dict(wpe),
            em=doc.get("em"),
            guide_path=doc.get("guide_path"),
            masks_path=doc.get("masks_path"),
            scm_mode=scm["mode"],
            beta=float(scm.get("beta", 0.95)),
            weights_path=scm.get("weights_path"),
            reference=doc.get("reference", "auto"),
            beamform=bool(doc.get("beamform", True)),
            loading=float(doc.get("loading", DEFAULT_LOADING)),
            outputs=list(doc.get("outputs", [])),
            references=list(doc.get("references", [])),
        )

    def to_dict(self) -> dict:
        stft = self.stft.to_dict()
        stft.pop("sample_rate_hz")
        scm = {"mode": self.scm_mode}
        if self.scm_mode == "recursive":
            scm["beta"] = self.beta
        if self.scm_mode == "weighted":
            scm["weights_path"] = self.weights_path
        doc = {
            "stft": stft,
            "wpe": None if self.wpe is None else self.wpe.to_dict(),
            "scm": scm,
            "reference": self.reference,
            "beamform": self.beamform,
            "loading": self.loading,
        }
        if self.em is not None:
            doc["em"] = dict(self.em)
        for key in ("guide_path", "masks_path"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        if self.outputs:
            doc["outputs"] = list(self.outputs)
        if self.references:
            doc["references"] = list(self.references)
        return doc


class StageError(McseError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    outputs: list  # single-channel Spectrograms, one per speaker
    signals: list  # MultiChannelSignal (one channel) per speaker
    masks: np.ndarray
    reference_channel: int
    report: dict
    dereverberated: Spectrogram | None = None


@contextmanager
def _stage(name, timings, captured):
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            yield
        except ConfigurationError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, exc) from exc
        finally:
            timings[name] = time.perf_counter() - start
            for w in caught:
                captured.append(f"{name}: {w.message}")
                logger.warning("%s: %s", name, w.message)


def _scms(y, masks, config: PipelineConfig, weights):
    """Speech and noise SCMs per speaker; the noise of speaker k is everything else (1 - m_k)."""
    speakers = masks[1:]
    others = 1.0 - speakers
    if config.scm_mode == "block":
        return block_scm(y, speakers), block_scm(y, others)
    if config.scm_mode == "recursive":
        phi_x = recursive_scm(instantaneous_scm(y, speakers), config.beta)
        phi_n = recursive_scm(instantaneous_scm(y, others), config.beta)
        return phi_x, phi_n
    # per-class weights may stack the K speech profiles followed by the K noise profiles
    weights = np.asarray(weights)
    k = speakers.shape[0]
    if weights.ndim > 2 and weights.shape[0] == 2 * k:
        w_x, w_n = weights[:k], weights[k:]
    else:
        w_x = w_n = weights
    return weighted_scm(instantaneous_scm(y, speakers), w_x), weighted_scm(instantaneous_scm(y, others), w_n)


def enhance(signal, config: PipelineConfig, guide=None, masks=None, scm_weights=None, references=None) -> PipelineResult:
    """Run the configured chain on a multichannel signal or spectrogram.

    ``guide`` (``(K, T)``) constrains EM; ``masks`` (``(K+1, T, F)``) replaces
    it. ``references`` (per-speaker single-channel time signals) enable the
    metrics section of the report.
    """
    timings, captured = {}, []
    report = {"command": "enhance", "version": __version__, "config": config.to_dict()}

    with _stage("stft", timings, captured):
        if isinstance(signal, Spectrogram):
            spec = signal
        else:
            if not isinstance(signal, MultiChannelSignal):
                signal = MultiChannelSignal(signal, config.stft.sample_rate_hz)
            if signal.sample_rate_hz != config.stft.sample_rate_hz:
                config.stft = StftConfig.from_dict({**config.stft.to_dict(), "sample_rate_hz": signal.sample_rate_hz})
            spec = analyze(signal, config.stft)
    num_frames, num_bins, d = spec.shape
    if config.beamform and d < 2:
        raise ConfigurationError("beamforming needs at least two input channels")

    y = spec
    report["wpe_objective"] = []
    if config.wpe is not None:
        with _stage("wpe", timings, captured):
            y, _, trace = run_wpe(spec, config.wpe)
        report["wpe_objective"] = trace

    report["em_log_likelihood"] = []
    if masks is None:
        if config.em is None:
            raise ConfigurationError("no mask source: give 'em' settings or external masks")
        with _stage("em", timings, captured):
            masks, _, trace = run_em(
                y, config.em["num_classes"], config.em["iterations"], guide=guide, rng_seed=config.em["seed"]
            )
            if guide is None:
                masks = align_permutations(masks)
        report["em_log_likelihood"] = trace
        report["seed"] = config.em["seed"]
    else:
        masks = np.asarray(masks, dtype=float)
        if masks.ndim != 3 or masks.shape[1:] != (num_frames, num_bins):
            raise ConfigurationError(f"masks shape {masks.shape} does not match ({num_frames}, {num_bins})")
        report["seed"] = None
    num_speakers = masks.shape[0] - 1

    with _stage("scm", timings, captured):
        phi_x, phi_n = _scms(y, masks, config, scm_weights)

    with _stage("beamform", timings, captured):
        if config.reference == "auto":
            ref = select_reference(phi_x, phi_n)
        else:
            ref = int(config.reference)
            if ref >= d:
                raise ConfigurationError(f"reference channel {ref} out of range for {d} channels")
        outputs = []
        for k in range(num_speakers):
            if config.beamform:
                w = beamformer_weights(phi_x[k], phi_n[k], ref, config.loading)
                outputs.append(apply(y, w))
            else:
                outputs.append(y.with_data(masks[k + 1][..., None] * y.data[..., ref : ref + 1]))
    report["reference_channel"] = ref

    with _stage("istft", timings, captured):
        num_samples = spec.num_samples
        signals = [synthesize(o, num_samples) for o in outputs]

    if references is not None:
        with _stage("metrics", timings, captured):
            report["metrics"] = evaluate(signals, references, spec, ref)

    report["timings_s"] = timings
    report["warnings"] = captured
    return PipelineResult(outputs, signals, masks, ref, report, y if config.wpe is not None else None)


def evaluate(signals, references, mixture: Spectrogram, reference_channel: int) -> dict:
    """SI-SDR of each output and of the unprocessed reference channel against clean references.

    Multichannel references ``(N, D)`` are read at ``reference_channel``.
    """
    refs = []
    for r in references:
        r = r.samples if isinstance(r, MultiChannelSignal) else np.asarray(r, dtype=float)
        refs.append(r[:, reference_channel] if r.ndim == 2 else r.ravel())
    ests = [s.samples[:, 0] if isinstance(s, MultiChannelSignal) else np.asarray(s).ravel() for s in signals]
    n = min(len(refs[0]), len(ests[0]))
    refs = [r[:n] for r in refs]
    ests = [e[:n] for e in ests]
    mix = synthesize(mixture.with_data(mixture.data[..., reference_channel : reference_channel + 1])).samples[:n, 0]
    rows = []
    for rep in best_permutation_eval(ests, refs):
        row = rep.to_dict()
        row["input_si_sdr_db"] = si_sdr(mix, refs[rep.source])
        row["improvement_db"] = row["si_sdr_db"] - row["input_si_sdr_db"]
        rows.append(row)
    return {
        "per_source": rows,
        "mean_si_sdr_db": float(np.mean([r["si_sdr_db"] for r in rows])),
        "mean_improvement_db": float(np.mean([r["improvement_db"] for r in rows])),
    }


def resolve_path(base: Path, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else base / p
