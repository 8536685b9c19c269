"""Command-line entry point: ``mcse simulate``, ``mcse enhance`` and ``mcse eval``.

Exit codes: 0 success, 1 runtime failure (message names the stage), 2 configuration error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import ConfigurationError, FormatError, McseError
from .io_formats import load_json, read_activity, read_mask, read_wav, validate, write_activity, write_mask, write_wav
from .metrics import best_permutation_eval
from .pipeline import PipelineConfig, StageError, enhance, resolve_path
from .simulate import oracle_activity, render, scene_from_dict
from .stft import MultiChannelSignal, synthesize

logger = logging.getLogger("mcse")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run(stage: str, fn):
    """Map library errors onto exit codes."""
    try:
        return fn()
    except (ConfigurationError, FormatError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except StageError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    except (McseError, ValueError, ArithmeticError, OSError) as exc:
        _fail(EXIT_RUNTIME, f"stage '{stage}' failed: {exc}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@click.group()
@click.version_option(__version__, prog_name="mcse")
@click.option("--verbose", "-v", is_flag=True, help="Log stage progress and warnings to stderr.")
@click.option("--threads", type=click.IntRange(min=0), default=0, show_default=True,
              help="BLAS/LAPACK threads; 0 leaves the library default.")
@click.pass_context
def cli(ctx, verbose, threads):
    """Model-based multichannel speech enhancement."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")
    if threads > 0:
        ctx.with_resource(threadpool_limits(limits=threads))


@cli.command()
@click.argument("scene", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--seed", type=int, default=None, help="Overrides the scene's seed (default 0).")
@click.option("--dry-run", is_flag=True, help="Validate the scene and print it; write nothing.")
def simulate(scene, out_dir, seed, dry_run):
    """Render SCENE (JSON) into OUT_DIR: WAVs, oracle masks, activities and a manifest."""
    doc = _run("config", lambda: load_json(scene, "scene"))
    seed = doc.get("seed", 0) if seed is None else seed
    if dry_run:
        click.echo(json.dumps({**doc, "seed": seed}, indent=2, sort_keys=True))
        return
    spec, stft, ctf, ar = _run("config", lambda: scene_from_dict(doc, base_dir=scene.parent, rng_seed=seed))
    result = _run("render", lambda: render(spec, stft, ctf=ctf, ar=ar, rng_seed=seed))
    logger.info("rendered %d sources, %d frames", len(result.images), result.mixture.shape[0])

    def write_all():
        out_dir.mkdir(parents=True, exist_ok=True)
        n = result.mixture.num_samples
        files = {"mixture": "mixture.wav", "noise": "noise.wav", "oracle_masks": "oracle_masks.msk",
                 "oracle_activity": "oracle_activity.act"}
        write_wav(out_dir / files["mixture"], synthesize(result.mixture, n))
        write_wav(out_dir / files["noise"], synthesize(result.noise, n))
        for k, (image, early) in enumerate(zip(result.images, result.early_images)):
            files[f"image_{k}"] = f"image_{k}.wav"
            files[f"early_{k}"] = f"early_{k}.wav"
            write_wav(out_dir / files[f"image_{k}"], synthesize(image, n))
            write_wav(out_dir / files[f"early_{k}"], synthesize(early, n))
        write_mask(out_dir / files["oracle_masks"], result.oracle_masks)
        write_activity(out_dir / files["oracle_activity"], oracle_activity(result.sources))
        manifest = {
            "version": __version__,
            "seed": seed,
            "scene": doc,
            "sample_rate_hz": stft.sample_rate_hz,
            "num_samples": n,
            "reference_channel": result.reference_channel,
            "noise_level": result.noise_level,
            "files": {key: {"path": name, "sha256": _sha256(out_dir / name)} for key, name in sorted(files.items())},
        }
        _dump_json(out_dir / "manifest.json", manifest)

    _run("write", write_all)
    click.echo(str(out_dir / "manifest.json"))


@cli.command(name="enhance")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.argument("input_wav", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True)
@click.option("--seed", type=int, default=None, help="Overrides em.seed.")
@click.option("--dry-run", is_flag=True, help="Print the resolved configuration and exit.")
def enhance_cmd(config_path, input_wav, out_dir, seed, dry_run):
    """Enhance INPUT_WAV with the chain described by --config; writes output WAVs and report.json."""
    doc = _run("config", lambda: load_json(config_path, "pipeline"))
    if seed is not None and "em" in doc:
        doc["em"] = {**doc["em"], "seed": seed}
    base = config_path.parent
    config = _run("config", lambda: PipelineConfig.from_dict(doc))
    if dry_run:
        click.echo(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        return

    signal = _run("read", lambda: read_wav(input_wav))
    config = _run("config", lambda: PipelineConfig.from_dict(doc, sample_rate_hz=signal.sample_rate_hz))
    guide = masks = weights = references = None
    if config.guide_path:
        guide = _run("read", lambda: read_activity(resolve_path(base, config.guide_path)))
    if config.masks_path:
        masks = _run("read", lambda: read_mask(resolve_path(base, config.masks_path)))
    if config.weights_path:
        weights = _run("read", lambda: np.load(resolve_path(base, config.weights_path)))
    if config.references:
        references = _run("read", lambda: [read_wav(resolve_path(base, p)) for p in config.references])

    result = _run("enhance", lambda: enhance(signal, config, guide=guide, masks=masks, scm_weights=weights,
                                             references=references))

    def write_all():
        out_dir.mkdir(parents=True, exist_ok=True)
        names = config.outputs or [f"enhanced_{k}.wav" for k in range(len(result.signals))]
        if len(names) != len(result.signals):
            raise ConfigurationError(f"{len(names)} output paths for {len(result.signals)} sources")
        paths = [out_dir / name for name in names]
        for path, sig in zip(paths, result.signals):
            write_wav(path, sig)
        report = {**result.report, "outputs": [str(p) for p in paths]}
        validate(report, "report")
        _dump_json(out_dir / "report.json", report)
        return out_dir / "report.json"

    click.echo(str(_run("write", write_all)))


@cli.command(name="eval")
@click.option("--estimates", multiple=True, required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Estimated source WAV; repeat per source.")
@click.option("--references", multiple=True, required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Reference WAV; repeat per source, any order relative to --estimates.")
@click.option("--channel", type=click.IntRange(min=0), default=0, show_default=True,
              help="Channel read from multichannel files.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Report path; printed to stdout when omitted.")
def eval_cmd(estimates, references, channel, out):
    """SI-SDR of estimates against references under the best assignment."""

    def load(path):
        sig = read_wav(path)
        if channel >= sig.num_channels:
            raise ConfigurationError(f"{path}: has {sig.num_channels} channels, --channel {channel} requested")
        return sig.samples[:, channel]

    ests = _run("read", lambda: [load(p) for p in estimates])
    refs = _run("read", lambda: [load(p) for p in references])
    if len(ests) != len(refs):
        _fail(EXIT_CONFIG, f"{len(ests)} estimates for {len(refs)} references")

    def run():
        n = min(min(len(x) for x in ests), min(len(x) for x in refs))
        rows = [r.to_dict() for r in best_permutation_eval([e[:n] for e in ests], [r[:n] for r in refs])]
        return {
            "command": "eval",
            "version": __version__,
            "metrics": {"per_source": rows, "mean_si_sdr_db": float(np.mean([r["si_sdr_db"] for r in rows]))},
            "outputs": [str(p) for p in estimates],
        }

    report = _run("metrics", run)
    validate(report, "report")
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is None:
        click.echo(text)
    else:
        out.write_text(text + "\n")
        click.echo(str(out))


def main(argv=None):
    cli.main(args=argv, prog_name="mcse")


if __name__ == "__main__":
    main()
