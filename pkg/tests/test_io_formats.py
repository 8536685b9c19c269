import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mcse.errors import ConfigurationError, FormatError
from mcse.io_formats import (
    load_json,
    load_schema,
    read_activity,
    read_mask,
    read_scm,
    read_wav,
    validate,
    write_activity,
    write_mask,
    write_scm,
    write_wav,
)
from mcse.stft import MultiChannelSignal


def wav_bytes(fmt_tag, channels, rate, bits, payload):
    """Minimal RIFF/WAVE file assembled field by field."""
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_mask_fixture_by_hand(tmp_path):
    # K+1 = 3, T = 2, F = 4; value at (k, t, f) is (k*8 + t*4 + f) / 32
    values = [i / 32 for i in range(24)]
    raw = b"MSK1" + (3).to_bytes(4, "little") + (2).to_bytes(4, "little") + (4).to_bytes(4, "little")
    raw += b"".join(struct.pack("<f", v) for v in values)
    path = tmp_path / "m.msk"
    path.write_bytes(raw)
    masks = read_mask(path)
    assert masks.shape == (3, 2, 4) and masks.dtype == np.float32
    for k in range(3):
        for t in range(2):
            for f in range(4):
                assert masks[k, t, f] == (k * 8 + t * 4 + f) / 32
    write_mask(tmp_path / "again.msk", masks)
    assert (tmp_path / "again.msk").read_bytes() == raw


def test_activity_fixture_by_hand(tmp_path):
    raw = b"ACT1" + struct.pack("<II", 2, 3) + struct.pack("<6f", 1, 0, 1, 0, 0.5, 1)
    path = tmp_path / "a.act"
    path.write_bytes(raw)
    np.testing.assert_array_equal(read_activity(path), [[1, 0, 1], [0, 0.5, 1]])


def test_pcm16_four_channel_fixture(tmp_path):
    # sample n on channel c holds 1000*c + n, with channel 3 negated
    frames = [[1000 * c + n if c < 3 else -(1000 * c + n) for c in range(4)] for n in range(8)]
    payload = b"".join(struct.pack("<4h", *row) for row in frames)
    path = tmp_path / "four.wav"
    path.write_bytes(wav_bytes(1, 4, 16000, 16, payload))
    sig = read_wav(path)
    assert sig.sample_rate_hz == 16000 and sig.samples.shape == (8, 4)
    for c in range(4):
        np.testing.assert_array_equal(sig.samples[:, c], [row[c] / 32768 for row in frames])


def test_pcm16_scaling_extremes(tmp_path):
    path = tmp_path / "ext.wav"
    path.write_bytes(wav_bytes(1, 1, 8000, 16, struct.pack("<3h", -32768, 0, 32767)))
    np.testing.assert_array_equal(read_wav(path).samples[:, 0], [-1.0, 0.0, 32767 / 32768])


def test_float32_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (1000, 3)).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "f.wav", MultiChannelSignal(x, 22050))
    back = read_wav(tmp_path / "f.wav")
    assert back.sample_rate_hz == 22050
    np.testing.assert_array_equal(back.samples, x)
    mono = MultiChannelSignal(x[:, :1], 16000)
    write_wav(tmp_path / "m.wav", mono)
    np.testing.assert_array_equal(read_wav(tmp_path / "m.wav").samples, x[:, :1])


def test_pcm16_write_round_trip(tmp_path):
    x = np.array([[-1.0], [-0.5], [0.0], [12345 / 32768]])
    write_wav(tmp_path / "p.wav", MultiChannelSignal(x, 16000), encoding="pcm16")
    np.testing.assert_array_equal(read_wav(tmp_path / "p.wav").samples, x)
    with pytest.raises(FormatError):
        write_wav(tmp_path / "q.wav", MultiChannelSignal(x, 16000), encoding="mp3")


@pytest.mark.parametrize(
    "fmt_tag,bits,payload,codec",
    [(1, 32, struct.pack("<2i", 1, -1), "int32"), (3, 64, struct.pack("<2d", 0.1, -0.1), "float64")],
)
def test_unsupported_codec_named(tmp_path, fmt_tag, bits, payload, codec):
    path = tmp_path / "x.wav"
    path.write_bytes(wav_bytes(fmt_tag, 1, 16000, bits, payload))
    with pytest.raises(FormatError, match=codec):
        read_wav(path)


def test_not_a_wav(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"definitely not audio")
    with pytest.raises(FormatError):
        read_wav(path)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(0, 1, width=32)))
def test_mask_round_trip_property(tmp_path_factory, masks):
    path = tmp_path_factory.mktemp("rt") / "m.msk"
    write_mask(path, masks)
    back = read_mask(path)
    assert back.tobytes() == masks.tobytes()


def test_activity_and_scm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    act = rng.uniform(0, 1, (3, 17)).astype(np.float32)
    write_activity(tmp_path / "a.act", act)
    assert read_activity(tmp_path / "a.act").tobytes() == act.tobytes()
    scm = rng.standard_normal((2, 5, 3, 3)) + 1j * rng.standard_normal((2, 5, 3, 3))
    write_scm(tmp_path / "s.scm", scm)
    np.testing.assert_array_equal(read_scm(tmp_path / "s.scm"), scm)


def test_mask_errors(tmp_path):
    good = np.full((2, 2, 2), 0.5, dtype=np.float32)
    write_mask(tmp_path / "g.msk", good)
    raw = (tmp_path / "g.msk").read_bytes()

    (tmp_path / "magic.msk").write_bytes(b"MSK2" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_mask(tmp_path / "magic.msk")

    (tmp_path / "short.msk").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="28 bytes.*need 32"):
        read_mask(tmp_path / "short.msk")

    (tmp_path / "long.msk").write_bytes(raw + b"\0" * 4)
    with pytest.raises(FormatError, match="36 bytes"):
        read_mask(tmp_path / "long.msk")

    (tmp_path / "hdr.msk").write_bytes(b"MSK1" + b"\0" * 3)
    with pytest.raises(FormatError):
        read_mask(tmp_path / "hdr.msk")

    with pytest.raises(FormatError):
        read_activity(tmp_path / "g.msk")


@pytest.mark.parametrize("value,ok", [(1.0009, True), (-0.0009, True), (1.002, False), (-0.002, False), (np.nan, False)])
def test_mask_range_tolerance(tmp_path, value, ok):
    raw = b"MSK1" + struct.pack("<III", 1, 1, 2) + struct.pack("<2f", 0.5, value)
    (tmp_path / "r.msk").write_bytes(raw)
    if ok:
        assert read_mask(tmp_path / "r.msk").shape == (1, 1, 2)
    else:
        with pytest.raises(FormatError, match="outside"):
            read_mask(tmp_path / "r.msk")


def test_write_rejects_bad_arrays(tmp_path):
    with pytest.raises(FormatError):
        write_mask(tmp_path / "x.msk", np.zeros((2, 2)))
    with pytest.raises(FormatError):
        write_activity(tmp_path / "x.act", np.full((2, 2), 1.5))


def test_schemas_load_and_report_field_path(tmp_path):
    for name in ("scene", "pipeline", "report"):
        assert load_schema(name)["type"] == "object"
    validate({"em": {"num_classes": 3}}, "pipeline")
    with pytest.raises(ConfigurationError, match="em/num_classes"):
        validate({"em": {"num_classes": "three"}}, "pipeline")
    with pytest.raises(ConfigurationError, match="sources/0/doa_deg"):
        validate({"mic_positions": [[0, 0, 0]], "sources": [{"doa_deg": "north"}]}, "scene")
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        load_json(path)
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_json(tmp_path / "missing.json")


def test_documented_schemas_match_package():
    docs = Path(__file__).resolve().parents[1] / "docs" / "schemas"
    for name in ("scene", "pipeline", "report"):
        assert json.loads((docs / f"{name}.schema.json").read_text()) == load_schema(name)
