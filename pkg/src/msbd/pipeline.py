"""End-to-end orchestration: crop, staged blended diffusion, final composite.

Stage 1 runs at the denoiser's native resolution on a square crop around the
mask: a batch of repaint-blended samples is generated, reranked, and (outside
pixel-space mode) decoder-optimized. Each later stage upscales the previous
output, rebuilds the working buffer as mask*SR(prev) + (1-mask)*LP(original),
runs a partial blended rollout, and decoder-optimizes again. The final stage
may process overlapping tiles that are alpha-composited back together. The
returned image equals the input outside the mask support.

Noise is drawn from streams keyed by (seed, purpose, index), so candidate and
tile work items are order-free and safe to run concurrently.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blend import BlendInputs, derive_seed, blend_masked, first_stage_sample, sdedit_blended_stage
from .denoiser import Conditioning, DenoiserBackend
from .errors import BackendError, ConfigError
from .image_ops import (
    alpha_composite,
    crop_square_around_mask,
    cut_tiles,
    feather_weights,
    low_pass,
    make_tile_grid,
    resize_bilinear,
)
from .latent_codec import (
    DecoderOptConfig,
    ToyCodec,
    decode,
    decoder_optimize,
    encode,
    make_codec,
    segmented_decoder_optimize,
    with_params,
)
from .rerank import Scorer, select_best
from .schedule import make_schedule, make_timestep_plan
from .upscaler import UpscalerBackend, upscale

# Fig.-4-style upscaling ablations. "a"/"b" skip the diffusion stages and
# upscale the first-stage pick directly; "c"/"d" run the stages without
# blending (c also drops the prompt); "e" uses the unfiltered original as
# background; "f" is the full method with the low-pass-filtered background.
VARIANTS = ("a", "b", "c", "d", "e", "f")

Sink = Callable[[str, np.ndarray], None]


@dataclass(frozen=True)
class StageConfig:
    """One upscaling stage. long_edge 0 means the full crop resolution."""

    long_edge: int
    t_prime_fraction: float
    segmented: bool = False
    tile_size: int = 768
    overlap: int = 128

    def __post_init__(self):
        if self.long_edge < 0:
            raise ConfigError(f"long_edge must be >= 0, got {self.long_edge}")
        # 0.0 is allowed as the degenerate no-denoise stage
        if not 0.0 <= self.t_prime_fraction <= 1.0:
            raise ConfigError(f"t_prime_fraction {self.t_prime_fraction} outside [0, 1]")
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 0 <= self.overlap < self.tile_size:
            raise ConfigError(f"overlap {self.overlap} outside [0, tile_size)")


def _default_stages() -> tuple[StageConfig, ...]:
    return (
        StageConfig(long_edge=768, t_prime_fraction=0.4),
        StageConfig(long_edge=0, t_prime_fraction=0.25, segmented=True),
    )


@dataclass(frozen=True)
class PipelineConfig:
    batch_b: int = 5
    repaint_r: int = 5
    margin: int = 0
    lam: float = 1.0
    sampler_steps: int = 50
    t_train: int = 1000
    seed: int = 0
    guidance: float = 7.5
    stages: tuple[StageConfig, ...] = field(default_factory=_default_stages)
    pixel_space_mode: bool = False
    dump_intermediates: bool = False
    decoder_steps: int = 100
    decoder_lr: float = 1e-4
    max_tiles: int = 256
    variant: str = "f"

    def __post_init__(self):
        if self.batch_b < 1:
            raise ConfigError(f"batch_b must be >= 1, got {self.batch_b}")
        if self.repaint_r < 0:
            raise ConfigError(f"repaint_r must be >= 0, got {self.repaint_r}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.sampler_steps < 1:
            raise ConfigError(f"sampler_steps must be >= 1, got {self.sampler_steps}")
        if self.t_train < self.sampler_steps:
            raise ConfigError(f"t_train {self.t_train} < sampler_steps {self.sampler_steps}")
        if self.decoder_steps < 0 or self.decoder_lr <= 0:
            raise ConfigError("decoder optimization needs steps >= 0 and lr > 0")
        if self.max_tiles < 1:
            raise ConfigError(f"max_tiles must be >= 1, got {self.max_tiles}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant {self.variant!r} not one of {VARIANTS}")
        object.__setattr__(self, "stages", tuple(self.stages))
        for st in self.stages:
            if not isinstance(st, StageConfig):
                raise ConfigError(f"stages must hold StageConfig, got {type(st).__name__}")
        edges = [st.long_edge for st in self.stages]
        if 0 in edges[:-1]:
            raise ConfigError("long_edge=0 (full crop resolution) is only valid for the last stage")
        positive = [e for e in edges if e > 0]
        if any(b <= a for a, b in zip(positive, positive[1:])):
            raise ConfigError(f"stage long edges must increase, got {edges}")

    def decoder_opt_config(self) -> DecoderOptConfig:
        return DecoderOptConfig(lam=self.lam, steps=self.decoder_steps, lr=self.decoder_lr)


@dataclass
class Backends:
    """The pluggable model endpoints a run needs."""

    denoiser: DenoiserBackend
    upscaler: UpscalerBackend
    scorer: Scorer
    native_resolution: int = 64
    codec: ToyCodec | None = None

    def __post_init__(self):
        if self.native_resolution < 1:
            raise ConfigError(f"native_resolution must be >= 1, got {self.native_resolution}")


def _resize_mask(mask: np.ndarray, edge: int) -> np.ndarray:
    # keep the mask soft but inside [0, 1] despite float round-off
    return np.clip(resize_bilinear(mask, edge, edge), 0.0, 1.0)


def _as_f32(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float32)


def _codec_for(backends: Backends, image: np.ndarray) -> ToyCodec:
    if backends.codec is not None:
        return backends.codec
    channels = 1 if image.ndim == 2 else image.shape[2]
    return make_codec(2, channels=channels)


def _decoder_refine(cfg: PipelineConfig, backends: Backends, x_blend: np.ndarray,
                    x_orig: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Encode the stage output and re-decode it with per-image-tuned weights."""
    codec = _codec_for(backends, x_blend)
    z = encode(codec, x_blend)
    params = decoder_optimize(codec, z, x_orig, mask, cfg.decoder_opt_config())
    h, w = x_blend.shape[:2]
    return _as_f32(decode(with_params(codec, params), z, out_h=h, out_w=w))


def _stage_edges(cfg: PipelineConfig, crop_side: int, native: int) -> list[int]:
    edges = [crop_side if st.long_edge == 0 else st.long_edge for st in cfg.stages]
    prev = native
    for i, e in enumerate(edges):
        if e <= prev:
            raise ConfigError(f"stage {i + 2} resolution {e} does not grow from {prev}")
        prev = e
    if edges and edges[-1] != crop_side:
        raise ConfigError(
            f"final stage resolution {edges[-1]} must equal the crop side {crop_side}")
    return edges


def _background(cfg: PipelineConfig, x_orig: np.ndarray, prev_edge: int, edge: int) -> np.ndarray:
    if cfg.variant == "e":  # unfiltered original as background
        return _as_f32(resize_bilinear(x_orig, edge, edge))
    return _as_f32(low_pass(x_orig, prev_edge, prev_edge, edge, edge))


def _stage_cond(cfg: PipelineConfig, prompt: str) -> Conditioning:
    return Conditioning(prompt="" if cfg.variant == "c" else prompt, guidance=cfg.guidance)


def _stage_mask(cfg: PipelineConfig, mask: np.ndarray) -> np.ndarray:
    if cfg.variant in ("c", "d"):  # no blending: denoise the whole buffer
        return np.ones_like(mask)
    return mask


def run_first_stage(cfg: PipelineConfig, backends: Backends, x_tilde: np.ndarray,
                    mask: np.ndarray, prompt: str, jobs: int = 1,
                    sink: Sink | None = None) -> np.ndarray:
    """Batch of repaint-blended samples at native resolution; reranked pick."""
    schedule = make_schedule(cfg.t_train)
    plan = make_timestep_plan(cfg.t_train, cfg.sampler_steps)
    cond = Conditioning(prompt=prompt, guidance=cfg.guidance)

    def one(i: int) -> np.ndarray:
        inputs = BlendInputs(x_tilde, mask, cond, plan, derive_seed(cfg.seed, "stage", 1, "cand", i))
        try:
            return first_stage_sample(schedule, backends.denoiser, inputs, cfg.repaint_r)
        except BackendError as exc:
            raise BackendError(f"stage 1, candidate {i}: {exc}") from exc

    if jobs > 1 and cfg.batch_b > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, cfg.batch_b)) as pool:
            candidates = list(pool.map(one, range(cfg.batch_b)))
    else:
        candidates = [one(i) for i in range(cfg.batch_b)]
    if sink is not None:
        for i, c in enumerate(candidates):
            sink(f"stage1_cand{i}", c)
    best = select_best(backends.scorer, candidates, prompt, jobs=jobs)
    return candidates[best]


def run_intermediate_stage(cfg: PipelineConfig, backends: Backends, stage: StageConfig,
                           x_prev: np.ndarray, x_orig: np.ndarray, mask_orig: np.ndarray,
                           prompt: str, stage_index: int = 2,
                           sink: Sink | None = None) -> np.ndarray:
    """Upscale, rebuild the working buffer, partial blended rollout, refine.

    x_orig and mask_orig are the full-resolution square crop and its mask;
    the stage works at stage.long_edge (or the crop side when 0).
    """
    crop_side = x_orig.shape[0]
    edge = crop_side if stage.long_edge == 0 else stage.long_edge
    prev_edge = x_prev.shape[0]
    try:
        x_sr = _as_f32(_stage_sr(cfg, backends, x_prev, edge))
    except BackendError as exc:
        raise BackendError(f"stage {stage_index}: upscaling failed: {exc}") from exc
    mask_s = _resize_mask(mask_orig, edge)
    x_tilde = blend_masked(x_sr, _background(cfg, x_orig, prev_edge, edge), mask_s)
    if sink is not None:
        sink(f"stage{stage_index}_sr", x_sr)
        sink(f"stage{stage_index}_xtilde", x_tilde)

    schedule = make_schedule(cfg.t_train)
    plan = make_timestep_plan(cfg.t_train, cfg.sampler_steps)
    # keyed as tile 0 so a single-tile segmented stage is bit-identical
    inputs = BlendInputs(x_tilde, _stage_mask(cfg, mask_s), _stage_cond(cfg, prompt), plan,
                         derive_seed(cfg.seed, "stage", stage_index, "tile", 0))
    try:
        x_blend = sdedit_blended_stage(schedule, backends.denoiser, inputs, stage.t_prime_fraction)
    except BackendError as exc:
        raise BackendError(f"stage {stage_index}: {exc}") from exc
    if sink is not None:
        sink(f"stage{stage_index}_blend", x_blend)
    if cfg.pixel_space_mode:
        return x_blend
    refined = _decoder_refine(cfg, backends, x_blend,
                              _as_f32(resize_bilinear(x_orig, edge, edge)), mask_s)
    if sink is not None:
        sink(f"stage{stage_index}_decoded", refined)
    return refined


def _stage_sr(cfg: PipelineConfig, backends: Backends, x_prev: np.ndarray,
              edge: int) -> np.ndarray:
    if cfg.variant == "a":
        return resize_bilinear(x_prev, edge, edge)
    return upscale(backends.upscaler, x_prev, edge, edge)


def run_segmented_stage(cfg: PipelineConfig, backends: Backends, stage: StageConfig,
                        x_prev: np.ndarray, x_orig: np.ndarray, mask_orig: np.ndarray,
                        prompt: str, stage_index: int = 2, jobs: int = 1,
                        tile_order: Sequence[int] | None = None,
                        sink: Sink | None = None) -> np.ndarray:
    """Like run_intermediate_stage but tiled, with per-tile noise streams.

    tile_order permutes execution only; tiles composite in grid order and
    each draws noise keyed by its grid index, so the output is identical for
    every order. Tiles whose mask is entirely zero skip denoising: a blended
    rollout with a zero mask returns its input bitwise.
    """
    crop_side = x_orig.shape[0]
    edge = crop_side if stage.long_edge == 0 else stage.long_edge
    prev_edge = x_prev.shape[0]
    grid = make_tile_grid(edge, edge, stage.tile_size, stage.overlap)
    if len(grid.rects) > cfg.max_tiles:
        raise ConfigError(
            f"stage {stage_index}: {len(grid.rects)} tiles exceed the budget of {cfg.max_tiles}")

    try:
        x_sr = _as_f32(_stage_sr(cfg, backends, x_prev, edge))
    except BackendError as exc:
        raise BackendError(f"stage {stage_index}: upscaling failed: {exc}") from exc
    mask_s = _resize_mask(mask_orig, edge)
    x_tilde = blend_masked(x_sr, _background(cfg, x_orig, prev_edge, edge), mask_s)
    if sink is not None:
        sink(f"stage{stage_index}_sr", x_sr)
        sink(f"stage{stage_index}_xtilde", x_tilde)

    schedule = make_schedule(cfg.t_train)
    plan = make_timestep_plan(cfg.t_train, cfg.sampler_steps)
    cond = _stage_cond(cfg, prompt)
    mask_eff = _stage_mask(cfg, mask_s)
    tiles_in = cut_tiles(x_tilde, grid)
    masks_in = cut_tiles(mask_eff, grid)

    def one(k: int) -> np.ndarray:
        if not masks_in[k].any():
            return tiles_in[k]
        inputs = BlendInputs(tiles_in[k], masks_in[k], cond, plan,
                             derive_seed(cfg.seed, "stage", stage_index, "tile", k))
        try:
            return sdedit_blended_stage(schedule, backends.denoiser, inputs,
                                        stage.t_prime_fraction)
        except BackendError as exc:
            raise BackendError(f"stage {stage_index}, tile {k}: {exc}") from exc

    order = list(range(len(grid.rects))) if tile_order is None else list(tile_order)
    if sorted(order) != list(range(len(grid.rects))):
        raise ConfigError(f"tile_order must permute 0..{len(grid.rects) - 1}")
    out_tiles: list[np.ndarray | None] = [None] * len(grid.rects)
    if jobs > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(order))) as pool:
            for k, tile in zip(order, pool.map(one, order)):
                out_tiles[k] = tile
    else:
        for k in order:
            out_tiles[k] = one(k)
    weights = feather_weights(grid, edge, edge)
    x_blend = alpha_composite(out_tiles, grid, weights)
    if sink is not None:
        sink(f"stage{stage_index}_blend", x_blend)
    if cfg.pixel_space_mode:
        return x_blend

    codec = _codec_for(backends, x_blend)
    x_orig_s = _as_f32(resize_bilinear(x_orig, edge, edge))
    z_tiles = [encode(codec, tile) for tile in cut_tiles(x_blend, grid)]
    params = segmented_decoder_optimize(codec, z_tiles, x_orig_s, mask_s, grid,
                                        cfg.decoder_opt_config())
    tuned = with_params(codec, params)
    decoded = [_as_f32(decode(tuned, z, out_h=h, out_w=w))
               for z, (_, _, w, h) in zip(z_tiles, grid.rects)]
    refined = alpha_composite(decoded, grid, weights)
    if sink is not None:
        sink(f"stage{stage_index}_decoded", refined)
    return refined


def run_pipeline(cfg: PipelineConfig, backends: Backends, x_in: np.ndarray,
                 mask: np.ndarray, prompt: str, jobs: int = 1,
                 tile_order: Sequence[int] | None = None,
                 sink: Sink | None = None) -> np.ndarray:
    """Full multi-stage edit; the output matches x_in in size and dtype rules.

    Outside the mask support the output equals the input exactly (the final
    composite reads those pixels straight from x_in). jobs and tile_order
    affect scheduling only, never the result.
    """
    x_full = _as_f32(x_in)
    if x_full.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or 3-D, got shape {x_full.shape}")
    mask_full = _as_f32(mask)
    if mask_full.size and (mask_full.min() < 0 or mask_full.max() > 1):
        raise ValueError("mask values outside [0, 1]")
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    emit = sink if (cfg.dump_intermediates and sink is not None) else None

    rect, x_crop, mask_crop = crop_square_around_mask(x_full, mask_full, cfg.margin)
    crop_side = rect[2]
    native = backends.native_resolution
    if cfg.variant in ("c", "d", "e", "f"):
        _stage_edges(cfg, crop_side, native)  # fail before any model call
    if emit is not None:
        emit("crop", x_crop)

    x_tilde1 = _as_f32(resize_bilinear(x_crop, native, native))
    mask1 = _resize_mask(mask_crop, native)
    if emit is not None:
        emit("stage1_input", x_tilde1)
    x_cur = run_first_stage(cfg, backends, x_tilde1, mask1, prompt, jobs=jobs, sink=emit)
    if emit is not None:
        emit("stage1_picked", x_cur)
    if not cfg.pixel_space_mode:
        x_cur = _decoder_refine(cfg, backends, x_cur, x_tilde1, mask1)
        if emit is not None:
            emit("stage1_decoded", x_cur)

    if cfg.variant in ("a", "b") or not cfg.stages:
        if x_cur.shape[0] != crop_side:
            if cfg.variant == "b":
                x_cur = _as_f32(upscale(backends.upscaler, x_cur, crop_side, crop_side))
            else:
                x_cur = _as_f32(resize_bilinear(x_cur, crop_side, crop_side))
    else:
        for i, stage in enumerate(cfg.stages):
            stage_index = i + 2
            if stage.segmented:
                x_cur = run_segmented_stage(cfg, backends, stage, x_cur, x_crop, mask_crop,
                                            prompt, stage_index, jobs=jobs,
                                            tile_order=tile_order, sink=emit)
            else:
                x_cur = run_intermediate_stage(cfg, backends, stage, x_cur, x_crop, mask_crop,
                                               prompt, stage_index, sink=emit)
    if emit is not None:
        emit("final_crop", x_cur)

    out = x_full.copy()
    x0, y0, side = rect[0], rect[1], rect[2]
    region = out[y0:y0 + side, x0:x0 + side]
    out[y0:y0 + side, x0:x0 + side] = blend_masked(x_cur, region, mask_crop)
    if emit is not None:
        emit("output", out)
    return out
