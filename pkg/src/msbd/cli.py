"""Command-line front end: load inputs, build a config, run, write outputs.

Exit codes: 0 success, 1 malformed input or invocation, 2 backend failure,
3 configuration error. A YAML file mirrors PipelineConfig field names (with
``stages`` as a list of StageConfig mappings); command-line flags override
file values, and unknown keys fail fast.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np
import yaml

from . import png_io
from .backend_protocol import BackendClient
from .denoiser import MixtureSpec, OracleDenoiser, RemoteDenoiser, StubDenoiser
from .errors import BackendError, ConfigError, MsbdError
from .pipeline import Backends, PipelineConfig, StageConfig, run_pipeline
from .rerank import MockScorer, RemoteScorer
from .schedule import ddim_step, make_schedule, make_timestep_plan
from .upscaler import BicubicUpscaler, RemoteUpscaler

ENV_BACKEND_URL = "MSBD_BACKEND_URL"

# two well-separated modes; the demo prints their recovered statistics
DEMO_MIXTURE = MixtureSpec(components=((0.5, -1.0, 0.1), (0.5, 1.0, 0.1)))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep 2 for backends
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msbd-edit", description="Multi-stage blended-diffusion image editing")
    p.add_argument("--image", help="input PNG")
    p.add_argument("--mask", help="grayscale mask PNG, 0=keep, max=edit")
    p.add_argument("--prompt", default="", help="text conditioning")
    p.add_argument("--out", help="output PNG path")
    p.add_argument("--config", help="YAML config file mirroring PipelineConfig")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", choices=("oracle", "remote", "stub"), default="oracle")
    p.add_argument("--backend-url", default=None,
                   help=f"remote backend base URL (default ${ENV_BACKEND_URL})")
    p.add_argument("--mode", choices=("edit", "ablation"), default="edit")
    p.add_argument("--variant", choices=("a", "b", "c", "d", "e", "f"), default=None,
                   help="upscaling ablation preset (ablation mode)")
    p.add_argument("--upscale-only", choices=("bilinear", "sr"), default=None,
                   help="shorthand for variants a (bilinear) and b (sr)")
    p.add_argument("--demo", choices=("mixture",), default=None,
                   help="run a built-in synthetic demo instead of editing")
    p.add_argument("--dump-intermediates", metavar="DIR", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--pixel-space", action="store_true", default=None)
    p.add_argument("--steps", type=int, default=None, help="sampler steps")
    p.add_argument("--batch", type=int, default=None, help="first-stage batch size")
    p.add_argument("--repaint", type=int, default=None, help="repaint iterations")
    p.add_argument("--margin", type=int, default=None, help="context pixels around the mask")
    p.add_argument("--native-resolution", type=int, default=64,
                   help="first-stage resolution for the oracle/stub backends")
    return p


_CONFIG_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)}
_STAGE_KEYS = {f.name for f in dataclasses.fields(StageConfig)}


def load_config_file(path: str) -> dict:
    """Parse and validate the YAML tree; returns PipelineConfig kwargs."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "stages" in data:
        stages = data["stages"]
        if not isinstance(stages, list):
            raise ConfigError("stages must be a list of mappings")
        parsed = []
        for i, entry in enumerate(stages):
            if not isinstance(entry, dict):
                raise ConfigError(f"stage {i} must be a mapping")
            bad = set(entry) - _STAGE_KEYS
            if bad:
                raise ConfigError(f"stage {i}: unknown keys {sorted(bad)}")
            parsed.append(StageConfig(**entry))
        data["stages"] = tuple(parsed)
    return data


def assemble_config(args) -> PipelineConfig:
    kwargs = load_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "sampler_steps": args.steps,
        "batch_b": args.batch,
        "repaint_r": args.repaint,
        "margin": args.margin,
        "pixel_space_mode": args.pixel_space,
    }
    if args.dump_intermediates is not None:
        overrides["dump_intermediates"] = True
    variant = args.variant
    if args.upscale_only is not None:
        variant = {"bilinear": "a", "sr": "b"}[args.upscale_only]
    if args.mode == "ablation" and variant is None:
        raise UsageError("ablation mode needs --variant or --upscale-only")
    if variant is not None:
        overrides["variant"] = variant
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def make_backends(args) -> Backends:
    if args.backend == "remote":
        url = args.backend_url or os.environ.get(ENV_BACKEND_URL)
        if not url:
            raise ConfigError(f"remote backend needs --backend-url or ${ENV_BACKEND_URL}")
        client = BackendClient(url)
        native = int(client.health()["native_resolution"])
        return Backends(denoiser=RemoteDenoiser(client), upscaler=RemoteUpscaler(client),
                        scorer=RemoteScorer(client), native_resolution=native)
    denoiser = StubDenoiser() if args.backend == "stub" else OracleDenoiser(DEMO_MIXTURE)
    return Backends(denoiser=denoiser, upscaler=BicubicUpscaler(), scorer=MockScorer(),
                    native_resolution=args.native_resolution)


def _intermediate_writer(directory: str):
    os.makedirs(directory, exist_ok=True)
    counter = [0]

    def sink(name: str, image: np.ndarray) -> None:
        path = os.path.join(directory, f"{counter[0]:02d}_{name}.png")
        counter[0] += 1
        png_io.write_image(path, np.clip(image, 0.0, 1.0))

    return sink


def run_demo_mixture(args, out=None) -> int:
    """Deterministic DDIM sampling from the two-mode demo mixture."""
    out = sys.stdout if out is None else out
    schedule = make_schedule(1000)
    plan = make_timestep_plan(1000, 50)
    oracle = OracleDenoiser(DEMO_MIXTURE)
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    x = rng.standard_normal(2000)
    steps = list(plan.steps)
    for i, entry in enumerate(steps):
        t_hi = entry + 1
        t_lo = steps[i + 1] + 1 if i + 1 < len(steps) else 0
        eps = oracle.predict_eps(x, t_hi, schedule.alpha_bar(t_hi), None)
        x = ddim_step(schedule, x, eps, t_hi, t_lo)
    for mean in (-1.0, 1.0):
        grabbed = x[np.abs(x - mean) < 0.5]
        mass = grabbed.size / x.size
        print(f"mode {mean:+.1f}: mass {mass:.3f} mean {grabbed.mean():+.4f} "
              f"std {grabbed.std():.4f}", file=out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.demo is not None:
            return run_demo_mixture(args)
        if not (args.image and args.mask and args.out):
            raise UsageError("--image, --mask, and --out are required")
        if args.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
        cfg = assemble_config(args)
        backends = make_backends(args)
        image, depth = png_io.read_image(args.image)
        mask = png_io.read_mask(args.mask)
        if mask.shape != image.shape[:2]:
            raise OSError(f"mask {mask.shape} does not match image {image.shape[:2]}")
        sink = _intermediate_writer(args.dump_intermediates) if args.dump_intermediates else None
        result = run_pipeline(cfg, backends, image, mask, args.prompt,
                              jobs=args.jobs, sink=sink)
        png_io.write_image(args.out, result, depth=depth)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, MsbdError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
