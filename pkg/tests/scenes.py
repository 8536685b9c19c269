"""Pinned desk-scale scenes shared by the unit and acceptance tests."""

import numpy as np

from mcse.simulate import (
    SceneSpec,
    noise_bursts,
    random_ar_spec,
    random_ctf,
    render,
    steering_vector,
)
from mcse.stft import StftConfig

FS = 16000
# 25216 samples give exactly 200 frames at the default 512/128 geometry
TWO_TALKER_SAMPLES = 25216
TWO_TALKER_SEGMENTS = [(0.1, 0.85), (0.7, 1.45)]
TWO_TALKER_DOAS_DEG = (30.0, 150.0)

# 50 % overlap: frames two shifts apart share no samples, so a delay of 2
# keeps the current early frame out of the regressors
REVERB_STFT = StftConfig(frame_length=256, frame_shift=128, fft_size=256)


def circular_array(num_mics, radius=0.05):
    angles = 2 * np.pi * np.arange(num_mics) / num_mics
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(num_mics)], axis=1)


def two_talker_sources(seed):
    rng = np.random.default_rng(seed)
    return [noise_bursts(TWO_TALKER_SAMPLES, FS, rng, segments=[seg]) for seg in TWO_TALKER_SEGMENTS]


def two_talker_scene(seed=0, snr_db=20.0, model="anechoic", num_mics=4, stft=None):
    """Two partially overlapping talkers at 30 and 150 degrees plus white noise.

    Returns the render result and the ``SceneSpec``.
    """
    stft = stft or StftConfig()
    doas = [np.deg2rad(a) for a in TWO_TALKER_DOAS_DEG]
    mics = circular_array(num_mics)
    scene = SceneSpec(doas, mics, two_talker_sources(seed), sample_rate_hz=FS, snr_db=snr_db, model=model)
    ctf = None
    if model in ("ctf", "narrowband"):
        direct = np.stack([steering_vector(a, mics, stft.bin_frequencies()) for a in doas])
        ctf = random_ctf(2, stft.num_bins, num_mics, 4, 1, np.random.default_rng(seed + 100), decay=0.5, direct=direct)
    return render(scene, stft, ctf=ctf, rng_seed=seed + 1), scene


def reverb_burst_scene(seed=0, num_channels=2, delay=2, taps=4, duration_s=3.0):
    """Noiseless AR-reverberant scene driven by 10 ms bursts every 160 ms.

    The long pauses leave the reverberant tail alone in most frames, which
    is where the prediction filter becomes identifiable exactly.
    """
    rng = np.random.default_rng(seed)
    n = int(duration_s * FS)
    segments, t = [], 0.02
    while t + 0.01 < duration_s:
        segments.append((t, t + 0.01))
        t += 0.16
    x = noise_bursts(n, FS, rng, segments=segments)
    mics = circular_array(num_channels)
    scene = SceneSpec([0.7], mics, [x], sample_rate_hz=FS, model="ar_reverb")
    ar = random_ar_spec(REVERB_STFT.num_bins, num_channels, delay, taps, np.random.default_rng(seed + 1))
    return render(scene, REVERB_STFT, ar=ar), ar
