"""Multi-channel short-time Fourier analysis and overlap-add synthesis.

Shape convention used throughout the package: time-domain signals are
``(samples, channels)`` and spectrograms are ``(frames, bins, channels)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError

WINDOWS = ("hann", "sqrt_hann")


@dataclass(frozen=True)
class StftConfig:
    frame_length: int = 512
    frame_shift: int = 128
    fft_size: int = 512
    window: str = "sqrt_hann"
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.frame_length <= 0 or self.frame_shift <= 0:
            raise InvalidInputError("frame_length and frame_shift must be positive")
        if self.frame_length % self.frame_shift:
            raise InvalidInputError(
                f"frame_shift={self.frame_shift} must divide "
                f"frame_length={self.frame_length}"
            )
        # Hann-family windows vanish at the frame boundary, so at least two
        # frames must overlap every sample.
        if self.frame_length // self.frame_shift < 2:
            raise InvalidInputError("frame_shift must be at most frame_length / 2")
        if self.fft_size < self.frame_length or self.fft_size % 2:
            raise InvalidInputError("fft_size must be even and >= frame_length")
        if self.window not in WINDOWS:
            raise InvalidInputError(f"unknown window {self.window!r}, expected one of {WINDOWS}")
        if self.sample_rate_hz <= 0:
            raise InvalidInputError("sample_rate_hz must be positive")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def padding(self) -> int:
        """Samples of reflect padding added at each end before framing."""
        return self.frame_length - self.frame_shift

    def window_array(self) -> np.ndarray:
        n = np.arange(self.frame_length)
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_length)
        if self.window == "sqrt_hann":
            return np.sqrt(hann)
        return hann

    def bin_frequencies(self) -> np.ndarray:
        """Center frequency in Hz of every one-sided bin."""
        return np.arange(self.num_bins) * self.sample_rate_hz / self.fft_size

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MultiChannelSignal:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise InvalidInputError(f"expected (samples, channels), got shape {samples.shape}")
        self.samples = samples
        if self.sample_rate_hz <= 0:
            raise InvalidInputError("sample_rate_hz must be positive")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class Spectrogram:
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    num_samples: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise InvalidInputError(f"expected (frames, bins, channels), got shape {data.shape}")
        if data.shape[0] < 1:
            raise InvalidInputError("spectrogram needs at least one frame")
        if data.shape[1] != self.config.num_bins:
            raise InvalidInputError(
                f"{data.shape[1]} bins do not match fft_size={self.config.fft_size}"
            )
        self.data = data.astype(complex, copy=False)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return replace(self, data=data)


def as_tfd(spec) -> np.ndarray:
    """Return the ``(T, F, D)`` complex array of a Spectrogram or raw array."""
    if isinstance(spec, Spectrogram):
        return spec.data
    arr = np.asarray(spec)
    if arr.ndim != 3:
        raise InvalidInputError(f"expected (frames, bins, channels), got shape {arr.shape}")
    return arr


def num_frames(num_samples: int, config: StftConfig) -> int:
    padded = _padded_length(num_samples, config)
    return 1 + (padded - config.frame_length) // config.frame_shift


def _padded_length(num_samples: int, config: StftConfig) -> int:
    n = num_samples + 2 * config.padding
    excess = (n - config.frame_length) % config.frame_shift
    if excess:
        n += config.frame_shift - excess
    return n


def analyze(signal, config: StftConfig | None = None) -> Spectrogram:
    """One-sided STFT of every channel.

    The signal is reflect-padded by ``frame_length - frame_shift`` samples at
    both ends (and zero-padded at the end to a whole number of shifts), so
    every input sample is covered by ``frame_length / frame_shift`` frames.
    """
    if isinstance(signal, MultiChannelSignal):
        if config is None:
            config = StftConfig(sample_rate_hz=signal.sample_rate_hz)
        x = signal.samples
    else:
        config = config or StftConfig()
        x = np.asarray(signal, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
    n = x.shape[0]
    if n < config.frame_length:
        raise InvalidInputError(
            f"signal has {n} samples, shorter than one frame ({config.frame_length})"
        )
    p = config.padding
    padded = np.pad(x, ((p, p), (0, 0)), mode="reflect")
    padded = np.pad(padded, ((0, _padded_length(n, config) - padded.shape[0]), (0, 0)))
    frames = np.lib.stride_tricks.sliding_window_view(padded, config.frame_length, axis=0)
    frames = frames[:: config.frame_shift]  # (T, D, frame_length)
    spec = np.fft.rfft(frames * config.window_array(), n=config.fft_size, axis=-1)
    return Spectrogram(spec.transpose(0, 2, 1), config, num_samples=n)


def synthesize(spec: Spectrogram, num_samples: int | None = None) -> MultiChannelSignal:
    """Weighted overlap-add inverse of :func:`analyze`.

    Uses the analysis window for synthesis and divides by the summed squared
    window, which reconstructs exactly for every configuration accepted by
    :class:`StftConfig`.
    """
    config = spec.config
    data = spec.data
    num_frames_, _, channels = data.shape
    win = config.window_array()
    frames = np.fft.irfft(data.transpose(0, 2, 1), n=config.fft_size, axis=-1)
    frames = frames[..., : config.frame_length] * win
    total = (num_frames_ - 1) * config.frame_shift + config.frame_length
    out = np.zeros((total, channels))
    envelope = np.zeros(total)
    for t in range(num_frames_):
        start = t * config.frame_shift
        out[start : start + config.frame_length] += frames[t].T
        envelope[start : start + config.frame_length] += win**2
    tiny = np.finfo(float).tiny
    out /= np.maximum(envelope, tiny)[:, None]
    if num_samples is None:
        num_samples = spec.num_samples
    p = config.padding
    out = out[p:] if num_samples is None else out[p : p + num_samples]
    return MultiChannelSignal(out, config.sample_rate_hz)
