import numpy as np
import pytest

from mcse.errors import ConfigurationError
from mcse.metrics import si_sdr
from mcse.pipeline import PipelineConfig, StageError, enhance
from mcse.simulate import oracle_activity
from mcse.scm import block_weights
from mcse.stft import MultiChannelSignal, synthesize
from mcse.wpe import WpeConfig
from scenes import two_talker_scene


@pytest.fixture(scope="module")
def scene():
    out, _ = two_talker_scene(seed=5, snr_db=10.0)
    return out


def images(out):
    return [synthesize(im) for im in out.images]


def test_config_round_trip_and_validation():
    doc = {
        "em": {"num_classes": 3, "iterations": 5, "seed": 4},
        "wpe": {"delay": 2, "taps": 3},
        "scm": {"mode": "recursive", "beta": 0.9},
        "reference": 1,
    }
    config = PipelineConfig.from_dict(doc)
    assert config.wpe.taps == 3 and config.beta == 0.9 and config.em["seed"] == 4
    assert PipelineConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()
    assert PipelineConfig.from_dict({"masks_path": "m.msk", "wpe": None}).wpe is None
    for bad in (
        {},
        {"em": {"num_classes": 2}, "masks_path": "m.msk"},
        {"em": {"num_classes": 1}},
        {"em": {"num_classes": 2}, "scm": {"mode": "weighted"}},
        {"em": {"num_classes": 2}, "reference": "best"},
    ):
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict(bad)


def test_oracle_masks_improve_over_mixture(scene):
    config = PipelineConfig(masks_path="oracle", wpe=None)
    result = enhance(scene.mixture, config, masks=scene.oracle_masks, references=images(scene))
    metrics = result.report["metrics"]
    assert all(row["improvement_db"] >= 0 for row in metrics["per_source"])
    assert [row["estimate"] for row in metrics["per_source"]] == [0, 1]
    assert result.report["reference_channel"] == result.reference_channel


def test_report_contents(scene):
    guide = oracle_activity(scene.sources)
    config = PipelineConfig(em={"num_classes": 3, "iterations": 4, "seed": 2}, wpe=WpeConfig(iterations=2))
    result = enhance(scene.mixture, config, guide=guide)
    report = result.report
    assert len(report["em_log_likelihood"]) == 4 and len(report["wpe_objective"]) == 2
    assert set(report["timings_s"]) == {"stft", "wpe", "em", "scm", "beamform", "istft"}
    assert report["seed"] == 2 and "metrics" not in report
    assert len(result.signals) == 2 and result.signals[0].num_channels == 1
    assert result.signals[0].samples.shape[0] == scene.mixture.num_samples


def test_single_channel_with_beamforming_rejected():
    x = MultiChannelSignal(np.random.default_rng(0).standard_normal((8000, 1)), 16000)
    with pytest.raises(ConfigurationError, match="two input channels"):
        enhance(x, PipelineConfig(em={"num_classes": 2}, wpe=None))


def test_single_channel_mask_only_path():
    out, _ = two_talker_scene(seed=1, snr_db=20.0, num_mics=1)
    config = PipelineConfig(masks_path="oracle", wpe=None, beamform=False, reference=0)
    result = enhance(out.mixture, config, masks=out.oracle_masks)
    ref = synthesize(out.images[0]).samples[:, 0]
    mix = synthesize(out.mixture).samples[:, 0]
    assert si_sdr(result.signals[0].samples[:, 0], ref) > si_sdr(mix, ref)


def test_weighted_mode_matches_block(scene):
    masks = scene.oracle_masks
    block = enhance(scene.mixture, PipelineConfig(masks_path="m", wpe=None, reference=0), masks=masks)
    # speaker profiles first, then their complements
    weights = block_weights(np.concatenate([masks[1:], 1 - masks[1:]]))
    cfg = PipelineConfig(masks_path="m", wpe=None, reference=0, scm_mode="weighted", weights_path="w.npy")
    weighted = enhance(scene.mixture, cfg, masks=masks, scm_weights=weights)
    for a, b in zip(block.signals, weighted.signals):
        np.testing.assert_allclose(a.samples, b.samples, atol=1e-9)


def test_recursive_mode_runs(scene):
    cfg = PipelineConfig(masks_path="m", wpe=None, scm_mode="recursive", beta=0.9, reference=0)
    result = enhance(scene.mixture, cfg, masks=scene.oracle_masks)
    assert all(np.all(np.isfinite(s.samples)) for s in result.signals)


def test_mask_shape_mismatch(scene):
    with pytest.raises(ConfigurationError, match="masks shape"):
        enhance(scene.mixture, PipelineConfig(masks_path="m", wpe=None), masks=scene.oracle_masks[:, :10])


def test_stage_failure_names_stage(scene):
    bad_guide = np.ones((3, 5))
    with pytest.raises(StageError) as info:
        enhance(scene.mixture, PipelineConfig(em={"num_classes": 3, "iterations": 2}, wpe=None), guide=bad_guide)
    assert info.value.stage == "em"


def test_deterministic(scene):
    guide = oracle_activity(scene.sources)
    config = PipelineConfig(em={"num_classes": 3, "iterations": 5, "seed": 9}, wpe=WpeConfig(iterations=2, taps=2))
    a = enhance(scene.mixture, config, guide=guide)
    b = enhance(scene.mixture, config, guide=guide)
    for x, y in zip(a.signals, b.signals):
        np.testing.assert_allclose(x.samples, y.samples, rtol=0, atol=1e-12)
    assert a.report["em_log_likelihood"] == b.report["em_log_likelihood"]
