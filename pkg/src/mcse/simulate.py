"""Synthetic far-field scenes with known ground truth.

Four rendering modes share one STFT-domain pipeline:

* ``anechoic``   -- plane-wave steering vectors, per-bin multiplication.
* ``narrowband`` -- per-bin multiplication by the summed CTF taps.
* ``ctf``        -- convolution over frames with CTF taps, split at ``delta``
  into early and late parts.
* ``ar_reverb``  -- the direct-path image driven through a multichannel
  autoregressive recursion (the generative form of the WPE model).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .stft import MultiChannelSignal, Spectrogram, StftConfig, analyze

logger = logging.getLogger(__name__)

MODELS = ("anechoic", "narrowband", "ctf", "ar_reverb")
SOUND_SPEED = 343.0


def steering_vector(doa, mic_positions, frequency_hz, sound_speed=SOUND_SPEED):
    """Far-field steering vector(s) for a source at azimuth ``doa`` (radians).

    Delays are relative to the array centroid. ``frequency_hz`` may be a
    scalar or an array; the result has shape ``frequency_hz.shape + (D,)``.
    """
    freqs = np.asarray(frequency_hz, dtype=float)
    if np.any(freqs < 0):
        raise InvalidInputError("frequency must be non-negative")
    mics = np.atleast_2d(np.asarray(mic_positions, dtype=float))
    if mics.shape[1] == 2:
        mics = np.hstack([mics, np.zeros((len(mics), 1))])
    direction = np.array([np.cos(doa), np.sin(doa), 0.0])
    # a plane wave from `direction` reaches mics further along it earlier
    delays = -(mics - mics.mean(axis=0)) @ direction / sound_speed
    return np.exp(-2j * np.pi * freqs[..., None] * delays)


@dataclass
class SceneSpec:
    doas: list
    mic_positions: np.ndarray
    source_signals: list
    sample_rate_hz: int = 16000
    noise_level: float = 0.0
    sound_speed: float = SOUND_SPEED
    model: str = "anechoic"
    snr_db: float | None = None
    reference_channel: int = 0

    def __post_init__(self):
        self.mic_positions = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        self.source_signals = [_as_mono(s) for s in self.source_signals]
        if self.num_sources < 1:
            raise ConfigurationError("scene needs at least one source")
        if len(self.doas) != self.num_sources:
            raise ConfigurationError(
                f"{len(self.doas)} DOAs given for {self.num_sources} sources"
            )
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be non-negative")
        lengths = {len(s) for s in self.source_signals}
        if len(lengths) != 1:
            raise ConfigurationError("all source signals must have the same length")

    @property
    def num_sources(self) -> int:
        return len(self.source_signals)

    @property
    def num_channels(self) -> int:
        return self.mic_positions.shape[0]


def _as_mono(signal) -> np.ndarray:
    if isinstance(signal, MultiChannelSignal):
        signal = signal.samples
    x = np.asarray(signal, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ConfigurationError("source signals must be single channel")
        x = x[:, 0]
    return x


@dataclass
class CtfSpec:
    """Convolutive transfer function taps, shape ``(K, L, F, D)``."""

    taps: np.ndarray
    delta: int = 1

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim != 4 or self.taps.shape[1] < 1:
            raise ConfigurationError(f"CTF taps must be (K, L, F, D), got {self.taps.shape}")
        if not 0 <= self.delta <= self.taps.shape[1]:
            raise ConfigurationError("CTF early/late split must satisfy 0 <= delta <= L")


@dataclass
class ArReverbSpec:
    """Prediction matrices ``G[f, i]`` acting on ``y[t - delay - i]``, shape ``(F, taps, D, D)``."""

    matrices: np.ndarray
    delay: int = 1

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=complex)
        if self.matrices.ndim != 4 or self.matrices.shape[-1] != self.matrices.shape[-2]:
            raise ConfigurationError(f"AR matrices must be (F, taps, D, D), got {self.matrices.shape}")
        if self.delay < 1:
            raise ConfigurationError("AR delay must be >= 1")

    @property
    def taps(self) -> int:
        return self.matrices.shape[1]


@dataclass
class RenderResult:
    mixture: Spectrogram
    images: list
    noise: Spectrogram
    oracle_masks: np.ndarray
    early_images: list
    late_images: list
    sources: np.ndarray
    noise_level: float
    reference_channel: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def config(self) -> StftConfig:
        return self.mixture.config

    def image_array(self) -> np.ndarray:
        return np.stack([im.data for im in self.images])

    def early_array(self) -> np.ndarray:
        return np.stack([im.data for im in self.early_images])


def companion_spectral_radius(matrices: np.ndarray, delay: int) -> np.ndarray:
    """Spectral radius of the AR recursion's companion matrix, per frequency."""
    num_bins, taps, d, _ = matrices.shape
    order = delay + taps - 1
    comp = np.zeros((num_bins, order * d, order * d), dtype=complex)
    for i in range(taps):
        lag = delay + i
        comp[:, :d, (lag - 1) * d : lag * d] = matrices[:, i]
    if order > 1:
        comp[:, d:, :-d] = np.eye((order - 1) * d)
    return np.max(np.abs(np.linalg.eigvals(comp)), axis=-1)


def stabilize_ar(matrices: np.ndarray, delay: int, max_radius: float = 0.9) -> np.ndarray:
    """Scale lag-``l`` coefficients by ``a**l`` so the radius is at most ``max_radius``.

    Scaling every lag-``l`` coefficient by ``a**l`` scales all roots of the
    recursion by exactly ``a``.
    """
    radius = companion_spectral_radius(matrices, delay)
    scale = np.where(radius > max_radius, max_radius / np.maximum(radius, 1e-300), 1.0)
    lags = delay + np.arange(matrices.shape[1])
    return matrices * scale[:, None, None, None] ** lags[None, :, None, None]


def random_ar_spec(num_bins, num_channels, delay, taps, rng, scale=0.5, max_radius=0.9) -> ArReverbSpec:
    shape = (num_bins, taps, num_channels, num_channels)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * scale / np.sqrt(2 * num_channels)
    return ArReverbSpec(stabilize_ar(g, delay, max_radius), delay)


def random_ctf(num_sources, num_bins, num_channels, length, delta, rng, decay=0.5, direct=None) -> CtfSpec:
    """Exponentially decaying random CTF taps.

    ``direct`` (``(K, F, D)``), when given, replaces tap 0 so the taps keep
    the array's plane-wave structure on the direct path.
    """
    shape = (num_sources, length, num_bins, num_channels)
    taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    taps *= (decay ** np.arange(length))[None, :, None, None]
    if direct is not None:
        taps[:, 0] = direct
    return CtfSpec(taps, delta)


def add_noise(spec, sigma: float, rng_seed=None):
    """Add circular complex Gaussian noise of variance ``sigma**2`` per bin."""
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    noise = _complex_noise(data.shape, sigma, np.random.default_rng(rng_seed))
    out = data + noise
    return spec.with_data(out) if isinstance(spec, Spectrogram) else out


def _complex_noise(shape, sigma, rng) -> np.ndarray:
    if sigma == 0:
        return np.zeros(shape, dtype=complex)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def oracle_masks(images: np.ndarray, noise: np.ndarray, reference_channel=0) -> np.ndarray:
    """One-hot ``(K+1, T, F)`` masks; class 0 is noise, ties go to the lower index."""
    power = np.concatenate(
        [np.abs(noise[None, ..., reference_channel]) ** 2, np.abs(images[..., reference_channel]) ** 2]
    )
    winner = np.argmax(power, axis=0)
    return (np.arange(power.shape[0])[:, None, None] == winner[None]).astype(float)


def oracle_activity(sources: np.ndarray, threshold_db: float = -40.0) -> np.ndarray:
    """Binary ``(K, T)`` frame activity from per-source STFTs ``(K, T, F)``."""
    energy = np.sum(np.abs(sources) ** 2, axis=-1)
    peak = np.max(energy, axis=-1, keepdims=True)
    return (energy > peak * 10 ** (threshold_db / 10)).astype(float)


def _convolve_frames(s: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``sum_tau taps[tau, f] * s[t - tau, f]`` for ``s`` (T, F), taps (L, F, D)."""
    out = np.zeros(s.shape + (taps.shape[-1],), dtype=complex)
    for tau in range(min(taps.shape[0], s.shape[0])):
        out[tau:] += s[: s.shape[0] - tau, :, None] * taps[tau][None]
    return out


def ar_recursion(early: np.ndarray, spec: ArReverbSpec) -> np.ndarray:
    """Generate ``y[t] = early[t] + sum_i G[i] y[t - delay - i]`` for ``early`` (T, F, D)."""
    y = np.array(early, dtype=complex)
    for t in range(spec.delay, y.shape[0]):
        for i in range(spec.taps):
            lag = spec.delay + i
            if t - lag < 0:
                break
            y[t] += np.einsum("fij,fj->fi", spec.matrices[:, i], y[t - lag])
    return y


def render(
    scene: SceneSpec,
    stft: StftConfig | None = None,
    ctf: CtfSpec | None = None,
    ar: ArReverbSpec | None = None,
    rng_seed=None,
) -> RenderResult:
    stft = stft or StftConfig(sample_rate_hz=scene.sample_rate_hz)
    if stft.sample_rate_hz != scene.sample_rate_hz:
        raise ConfigurationError("scene and STFT sample rates differ")
    if scene.model in ("ctf", "narrowband") and ctf is None:
        raise ConfigurationError(f"model {scene.model!r} requires a CtfSpec")
    if scene.model == "ar_reverb" and ar is None:
        raise ConfigurationError("model 'ar_reverb' requires an ArReverbSpec")
    if scene.reference_channel >= scene.num_channels:
        raise ConfigurationError("reference channel out of range")

    sources = np.stack([analyze(s[:, None], stft).data[..., 0] for s in scene.source_signals])
    num_frames, num_bins = sources.shape[1:]
    d = scene.num_channels
    if ctf is not None and ctf.taps.shape[0] != scene.num_sources:
        raise ConfigurationError("CTF taps must cover every source")
    if ctf is not None and ctf.taps.shape[2:] != (num_bins, d):
        raise ConfigurationError(f"CTF taps must be (K, L, {num_bins}, {d})")
    if ar is not None and ar.matrices.shape[0] != num_bins or ar is not None and ar.matrices.shape[2] != d:
        raise ConfigurationError(f"AR matrices must be ({num_bins}, taps, {d}, {d})")

    freqs = stft.bin_frequencies()
    early = np.zeros((scene.num_sources, num_frames, num_bins, d), dtype=complex)
    late = np.zeros_like(early)
    for k, s in enumerate(sources):
        if scene.model == "anechoic":
            h = steering_vector(scene.doas[k], scene.mic_positions, freqs, scene.sound_speed)
            early[k] = s[..., None] * h[None]
        elif scene.model == "narrowband":
            early[k] = s[..., None] * ctf.taps[k].sum(axis=0)[None]
        elif scene.model == "ctf":
            early[k] = _convolve_frames(s, ctf.taps[k, : ctf.delta])
            late[k] = _convolve_frames(s, ctf.taps[k])
            late[k] -= early[k]
        else:
            h = steering_vector(scene.doas[k], scene.mic_positions, freqs, scene.sound_speed)
            early[k] = s[..., None] * h[None]
            late[k] = ar_recursion(early[k], ar) - early[k]
    images = early + late

    sigma = scene.noise_level
    if scene.snr_db is not None:
        power = np.mean(np.abs(images.sum(axis=0)) ** 2)
        sigma = float(np.sqrt(power / 10 ** (scene.snr_db / 10)))
    noise = _complex_noise(images.shape[1:], sigma, np.random.default_rng(rng_seed))
    mixture = images.sum(axis=0) + noise

    num_samples = len(scene.source_signals[0])
    wrap = lambda a: Spectrogram(a, stft, num_samples=num_samples)  # noqa: E731
    return RenderResult(
        mixture=wrap(mixture),
        images=[wrap(x) for x in images],
        noise=wrap(noise),
        oracle_masks=oracle_masks(images, noise, scene.reference_channel),
        early_images=[wrap(x) for x in early],
        late_images=[wrap(x) for x in late],
        sources=sources,
        noise_level=sigma,
        reference_channel=scene.reference_channel,
    )


def synthetic_speech(num_samples, sample_rate_hz, rng, segments=None, f0_range=(90.0, 220.0)):
    """Speech-like test signal: harmonic syllables with formant-shaped spectra.

    ``segments`` lists ``(start_s, end_s)`` intervals of activity; the signal
    is exactly zero outside them. Output has unit RMS over active samples.
    """
    fs = sample_rate_hz
    out = np.zeros(num_samples)
    if segments is None:
        segments = [(0.0, num_samples / fs)]
    for start_s, end_s in segments:
        start, end = int(round(start_s * fs)), min(int(round(end_s * fs)), num_samples)
        pos = start
        while pos < end:
            length = min(int(rng.uniform(0.12, 0.3) * fs), end - pos)
            out[pos : pos + length] = _syllable(length, fs, rng, f0_range)
            pos += length
    active = out != 0
    if active.any():
        out /= np.sqrt(np.mean(out[active] ** 2))
    return out


def noise_bursts(num_samples, sample_rate_hz, rng, segments=None, ramp_s=0.01):
    """White Gaussian source active in ``segments`` with raised-cosine on/off ramps.

    Spectrally flat, so per-bin source power is concentrated around its mean;
    useful when a test should isolate spatial cues from spectral sparsity.
    """
    fs = sample_rate_hz
    out = np.zeros(num_samples)
    if segments is None:
        segments = [(0.0, num_samples / fs)]
    ramp = max(int(ramp_s * fs), 1)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    for start_s, end_s in segments:
        start, end = int(round(start_s * fs)), min(int(round(end_s * fs)), num_samples)
        seg = rng.standard_normal(end - start)
        r = min(ramp, (end - start) // 2)
        seg[:r] *= fade[:r]
        seg[end - start - r :] *= fade[:r][::-1]
        out[start:end] = seg
    active = out != 0
    if active.any():
        out /= np.sqrt(np.mean(out[active] ** 2))
    return out


def _syllable(length, fs, rng, f0_range):
    if length < 2:
        return np.zeros(length)
    t = np.arange(length) / fs
    f0 = rng.uniform(*f0_range) * (1 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-9))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    formants = np.sort(rng.uniform([300, 900, 2000], [900, 2200, 3500]))
    num_harmonics = int(0.45 * fs / f0.max())
    x = np.zeros(length)
    for h in range(1, num_harmonics + 1):
        fh = h * f0.mean()
        gain = sum(np.exp(-0.5 * ((fh - fm) / 150.0) ** 2) for fm in formants) + 0.05
        x += gain / h**0.5 * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x += 0.05 * rng.standard_normal(length)
    return x * np.hanning(length) * rng.uniform(0.5, 1.5)


def scene_from_dict(doc: dict, base_dir=".", rng_seed=0):
    """Build ``(SceneSpec, StftConfig, CtfSpec | None, ArReverbSpec | None)`` from a scene document.

    The document is assumed to be schema-validated already.
    """
    from .io_formats import read_wav

    fs = int(doc.get("sample_rate_hz", 16000))
    stft = StftConfig.from_dict({**doc.get("stft", {}), "sample_rate_hz": fs})
    rng = np.random.default_rng(rng_seed)
    num_samples = int(round(doc["duration_s"] * fs)) if "duration_s" in doc else None
    signals, doas = [], []
    for src in doc["sources"]:
        doas.append(np.deg2rad(src["doa_deg"]) if "doa_deg" in src else float(src.get("doa", 0.0)))
        if "wav" in src:
            sig = read_wav(Path(base_dir) / src["wav"])
            if sig.sample_rate_hz != fs:
                raise ConfigurationError(f"{src['wav']}: sample rate {sig.sample_rate_hz} != {fs}")
            x = sig.samples[:, 0]
            if num_samples is not None:
                x = np.pad(x, (0, max(0, num_samples - len(x))))[:num_samples]
        else:
            if num_samples is None:
                raise ConfigurationError("duration_s is required for synthetic sources")
            kind = src.get("type", "speech")
            generator = noise_bursts if kind == "bursts" else synthetic_speech
            x = generator(num_samples, fs, rng, segments=src.get("segments"))
        signals.append(x)
    if num_samples is None:
        n = max(len(x) for x in signals)
        signals = [np.pad(x, (0, n - len(x))) for x in signals]
    scene = SceneSpec(
        doas=doas,
        mic_positions=np.asarray(doc["mic_positions"], dtype=float),
        source_signals=signals,
        sample_rate_hz=fs,
        noise_level=float(doc.get("noise_level", 0.0)),
        sound_speed=float(doc.get("sound_speed", SOUND_SPEED)),
        model=doc.get("model", "anechoic"),
        snr_db=doc.get("snr_db"),
        reference_channel=int(doc.get("reference_channel", 0)),
    )
    ctf = ar = None
    freqs = stft.bin_frequencies()
    if "ctf" in doc or scene.model in ("ctf", "narrowband"):
        c = doc.get("ctf", {})
        direct = np.stack([steering_vector(a, scene.mic_positions, freqs, scene.sound_speed) for a in doas])
        ctf = random_ctf(
            scene.num_sources, stft.num_bins, scene.num_channels, int(c.get("length", 4)),
            int(c.get("delta", 2)), rng, decay=float(c.get("decay", 0.5)), direct=direct,
        )
    if "ar" in doc or scene.model == "ar_reverb":
        a = doc.get("ar", {})
        ar = random_ar_spec(
            stft.num_bins, scene.num_channels, int(a.get("delay", 2)), int(a.get("taps", 4)), rng,
            scale=float(a.get("scale", 0.5)), max_radius=float(a.get("max_radius", 0.9)),
        )
    return scene, stft, ctf, ar
