"""Pre-training and joint adversarial fine-tuning.

The four networks are prepared in stages: the RGB converter and the spectral
recovery model are pre-trained on pairs manufactured from linear demosaicking
plus the fixed colorimetric rendering; the demosaicking generator is
pre-trained self-supervised on gradient-consistency and smoothness terms; the
discriminator starts from variance-scaled random weights. Joint fine-tuning
then alternates one discriminator update with one update of the three
generator-side networks on the combined objective.

The mosaic set and the RGB corpus are consumed through independent samplers;
no pairing between them exists anywhere in the interface.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import losses as L
from .color import (ColorMatchingTable, RgbConverter, RgbConverterConfig,
                    SpectralRecoveryConfig, SpectralRecoveryNet, fixed_hsi_to_rgb)
from .datasets import CropSampler
from .errors import ConfigurationError, DivergenceError
from .losses import LossComponents, LossWeights
from .mosaic import (Hypercube, MsfaPattern, RgbImage, SnapshotMosaic,
                     default_band_centers, linear_demosaic)
from .networks import (DemosaicGenerator, DiscriminatorConfig, GeneratorConfig,
                       PatchDiscriminator, xavier_init_)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild the four networks from scratch."""

    band_map: tuple[tuple[int, ...], ...] = tuple(
        tuple(range(i * 4, i * 4 + 4)) for i in range(4))
    band_centers: tuple[float, ...] | None = None
    generator_base_channels: int = 32
    generator_depth: int = 3
    generator_blocks: int = 1
    rgb_hidden_width: int = 64
    spectral_base_channels: int = 32
    spectral_blocks: int = 3
    discriminator_base_channels: int = 64

    @property
    def pattern(self) -> MsfaPattern:
        return MsfaPattern(np.array(self.band_map, dtype=np.int64))

    @property
    def bands(self) -> int:
        return self.pattern.band_count

    def centers(self) -> np.ndarray:
        if self.band_centers is not None:
            return np.asarray(self.band_centers, dtype=np.float64)
        return default_band_centers(self.bands)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.bands, self.generator_base_channels,
                               self.generator_depth, self.generator_blocks)

    def rgb_config(self) -> RgbConverterConfig:
        return RgbConverterConfig(self.bands, self.rgb_hidden_width)

    def spectral_config(self) -> SpectralRecoveryConfig:
        return SpectralRecoveryConfig(self.bands, self.spectral_base_channels,
                                      self.spectral_blocks)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.discriminator_base_channels)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; the seed fixes every stochastic draw."""

    lr_demosaic: float = 1e-5
    lr_rgb: float = 1e-3
    lr_spectral: float = 1e-6
    lr_rgb_pretrain: float = 1e-2
    lr_demosaic_pretrain: float = 1e-3
    lr_spectral_pretrain: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 2
    crop_size: int = 72
    pretrain_steps: int = 500
    finetune_steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 500
    deterministic: bool = False
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("lr_demosaic", "lr_rgb", "lr_spectral", "lr_rgb_pretrain",
                     "lr_demosaic_pretrain", "lr_spectral_pretrain"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.batch_size < 1 or self.crop_size < 1:
            raise ConfigurationError("batch_size and crop_size must be positive")
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            raise ConfigurationError("step counts must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be positive")


def config_hash(spec: ModelSpec, config: TrainConfig) -> str:
    """Stable digest of the full configuration, for run records and resumes."""
    doc = {"model_spec": asdict(spec), "train_config": asdict(config)}
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@contextmanager
def _determinism(config: TrainConfig):
    torch.manual_seed(config.seed)
    if not config.deterministic:
        yield
        return
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def build_models(spec: ModelSpec, seed: int):
    """Seeded construction of all four networks, in a fixed order."""
    torch.manual_seed(seed)
    generator = DemosaicGenerator(spec.generator_config(), spec.pattern)
    rgb = RgbConverter(spec.rgb_config())
    spectral = SpectralRecoveryNet(spec.spectral_config())
    discriminator = PatchDiscriminator(spec.discriminator_config())
    xavier_init_(discriminator)
    return generator, rgb, spectral, discriminator


def build_pretrain_pairs(mosaics: Sequence[SnapshotMosaic],
                         cmf: ColorMatchingTable | None = None,
                         band_centers=None) -> list[tuple[Hypercube, RgbImage]]:
    """Deterministic (linear cube, fixed-rendering RGB) pairs for pre-training."""
    if not mosaics:
        raise ConfigurationError("pre-training needs a non-empty mosaic dataset")
    pairs = []
    for mosaic in mosaics:
        cube = linear_demosaic(mosaic, band_centers)
        pairs.append((cube, fixed_hsi_to_rgb(cube, cmf)))
    return pairs


def _stack_pairs(pairs, forward: bool):
    """(inputs, targets) float32 tensors; forward=True maps cube -> rgb."""
    cubes = torch.from_numpy(np.stack([np.asarray(c.values) for c, _ in pairs]))
    rgbs = torch.from_numpy(np.stack([np.asarray(r.values) for _, r in pairs]))
    return (cubes, rgbs) if forward else (rgbs, cubes)


def _check_finite(value: torch.Tensor, what: str) -> None:
    if not bool(torch.isfinite(value)):
        raise DivergenceError(f"{what} became non-finite; aborting training")


def _pretrain_regression(model, inputs, targets, lr, config, steps):
    if steps == 0:
        return model
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=config.adam_betas)
    rng = np.random.default_rng(config.seed)
    n = inputs.shape[0]
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, n, min(config.batch_size, n)))
        loss = (model(inputs[idx]) - targets[idx]).abs().mean()
        _check_finite(loss, "pre-training L1 loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model


def pretrain_rgb_converter(pairs, spec: ModelSpec, config: TrainConfig,
                           steps: int | None = None) -> RgbConverter:
    """L1 regression of the per-pixel converter onto the fixed rendering."""
    if not pairs:
        raise ConfigurationError("pre-training needs a non-empty pair dataset")
    with _determinism(config):
        model = RgbConverter(spec.rgb_config())
        inputs, targets = _stack_pairs(pairs, forward=True)
        return _pretrain_regression(
            model, inputs, targets, config.lr_rgb_pretrain, config,
            config.pretrain_steps if steps is None else steps)


def pretrain_spectral_recovery(pairs, spec: ModelSpec, config: TrainConfig,
                               steps: int | None = None) -> SpectralRecoveryNet:
    """L1 regression of the recovery network, RGB back to the linear cube."""
    if not pairs:
        raise ConfigurationError("pre-training needs a non-empty pair dataset")
    with _determinism(config):
        model = SpectralRecoveryNet(spec.spectral_config())
        inputs, targets = _stack_pairs(pairs, forward=False)
        return _pretrain_regression(
            model, inputs, targets, config.lr_spectral_pretrain, config,
            config.pretrain_steps if steps is None else steps)


def _mosaic_stacks(mosaics: Sequence[SnapshotMosaic], band_centers):
    """Per-image (B+1, H, W) stacks: interpolated cube plus the raw frame."""
    stacks = []
    for mosaic in mosaics:
        lin = linear_demosaic(mosaic, band_centers)
        stacks.append(np.concatenate([lin.values, mosaic.values[None]], axis=0))
    return stacks


def _split_stack_batch(batch: np.ndarray):
    cubes = torch.from_numpy(batch[:, :-1])
    mosaics = torch.from_numpy(batch[:, -1:])
    return cubes, mosaics


def pretrain_demosaicker(mosaics: Sequence[SnapshotMosaic], spec: ModelSpec,
                         config: TrainConfig,
                         steps: int | None = None) -> DemosaicGenerator:
    """Self-supervised warm start on gradient-consistency + smoothness only.

    No adversarial or cycle terms here; this reproduces the initialization the
    joint stage starts from.
    """
    if not mosaics:
        raise ConfigurationError("pre-training needs a non-empty mosaic dataset")
    steps = config.pretrain_steps if steps is None else steps
    with _determinism(config):
        model = DemosaicGenerator(spec.generator_config(), spec.pattern)
        if steps == 0:
            return model
        pattern = spec.pattern
        granule = int(np.lcm(pattern.period, 2 ** spec.generator_depth))
        crop = min(config.crop_size,
                   min(min(m.height, m.width) for m in mosaics))
        crop -= crop % granule
        if crop < granule:
            raise ConfigurationError("images too small for the generator depth")
        sampler = CropSampler(_mosaic_stacks(mosaics, spec.band_centers), crop,
                              pattern.period, config.seed + 1)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr_demosaic_pretrain,
                               betas=config.adam_betas)
        w = config.weights
        for _ in range(steps):
            lin, raw = _split_stack_batch(sampler.batch(config.batch_size))
            out = model(lin, raw)
            loss = w.lambda_sgc * L.sgc_loss(out) + w.lambda_tv * L.tv_loss(out)
            _check_finite(loss, "demosaicker pre-training loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
        return model


def assemble_checkpoint(generator: DemosaicGenerator, rgb: RgbConverter,
                        spectral: SpectralRecoveryNet, spec: ModelSpec,
                        config: TrainConfig, step: int = 0,
                        discriminator: PatchDiscriminator | None = None,
                        optimizers: dict | None = None) -> dict:
    """Versioned checkpoint payload; plain containers and tensors only."""
    models = {
        "demosaic": generator.state_dict(),
        "rgb": rgb.state_dict(),
        "spectral": spectral.state_dict(),
    }
    if discriminator is not None:
        models["discriminator"] = discriminator.state_dict()
    return {
        "version": CHECKPOINT_VERSION,
        "step": step,
        "model_spec": asdict(spec),
        "train_config": asdict(config),
        "config_hash": config_hash(spec, config),
        "models": models,
        "optimizers": optimizers or {},
    }


def save_checkpoint(checkpoint: dict, path) -> None:
    from .fileio import atomic_write

    with atomic_write(path) as fh:
        torch.save(checkpoint, fh)


def load_checkpoint(path) -> dict:
    checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    version = checkpoint.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    return checkpoint


def _spec_from_dict(doc: dict) -> ModelSpec:
    doc = dict(doc)
    doc["band_map"] = tuple(tuple(int(v) for v in row) for row in doc["band_map"])
    if doc.get("band_centers") is not None:
        doc["band_centers"] = tuple(float(v) for v in doc["band_centers"])
    return ModelSpec(**doc)


def _config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    doc["adam_betas"] = tuple(doc["adam_betas"])
    doc["weights"] = LossWeights(**doc["weights"])
    return TrainConfig(**doc)


def restore_models(checkpoint: dict):
    """Rebuild and load all networks stored in a checkpoint."""
    spec = _spec_from_dict(checkpoint["model_spec"])
    config = _config_from_dict(checkpoint["train_config"])
    generator, rgb, spectral, discriminator = build_models(spec, config.seed)
    generator.load_state_dict(checkpoint["models"]["demosaic"])
    rgb.load_state_dict(checkpoint["models"]["rgb"])
    spectral.load_state_dict(checkpoint["models"]["spectral"])
    if "discriminator" in checkpoint["models"]:
        discriminator.load_state_dict(checkpoint["models"]["discriminator"])
    return generator, rgb, spectral, discriminator, spec, config


def _rgb_arrays(rgb_corpus: Sequence) -> list[np.ndarray]:
    arrays = []
    for item in rgb_corpus:
        arr = np.asarray(getattr(item, "values", item), dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ConfigurationError(
                f"RGB corpus entries must be (3,H,W); got {arr.shape}")
        arrays.append(arr)
    return arrays


def joint_finetune(mosaics: Sequence[SnapshotMosaic], rgb_corpus: Sequence,
                   init: dict, config: TrainConfig,
                   steps: int | None = None,
                   checkpoint_dir=None) -> dict:
    """Alternating min-max fine-tuning of all networks; returns a checkpoint.

    Per step: one discriminator update (real RGB corpus crops against rendered
    demosaicking output), then one joint update of the demosaicker, converter
    and recovery networks on the combined objective. The two data sources are
    sampled by independent generators; no pairing is ever formed.
    """
    if not mosaics:
        raise ConfigurationError("fine-tuning needs a non-empty mosaic dataset")
    if not rgb_corpus:
        raise ConfigurationError("fine-tuning needs a non-empty RGB corpus")
    steps = config.finetune_steps if steps is None else steps

    spec = _spec_from_dict(init["model_spec"])
    if spec.pattern.band_map.tolist() != mosaics[0].pattern.band_map.tolist():
        raise ConfigurationError(
            "checkpoint/config mismatch: mosaic pattern differs from the "
            "pattern the checkpoint was trained with")

    with _determinism(config):
        generator, rgb, spectral, discriminator, _, _ = restore_models(init)
        if "discriminator" not in init["models"]:
            # fresh run: variance-scaled random discriminator; resumed runs
            # keep the discriminator stored in the checkpoint
            torch.manual_seed(config.seed + 17)
            xavier_init_(discriminator)

        if steps == 0:
            return assemble_checkpoint(generator, rgb, spectral, spec, config,
                                       step=int(init.get("step", 0)),
                                       discriminator=discriminator)

        crop = config.crop_size
        needed = np.lcm(spec.pattern.period, 2 ** spec.generator_depth)
        if crop % needed:
            raise ConfigurationError(
                f"crop_size {crop} must be a multiple of {needed}")
        from .networks import PATCH_RECEPTIVE_FIELD
        if crop < PATCH_RECEPTIVE_FIELD:
            raise ConfigurationError(
                f"crop_size {crop} is below the discriminator receptive field "
                f"{PATCH_RECEPTIVE_FIELD}")

        mosaic_sampler = CropSampler(_mosaic_stacks(mosaics, spec.band_centers),
                                     crop, spec.pattern.period, config.seed + 2)
        rgb_sampler = CropSampler(_rgb_arrays(rgb_corpus), crop, 1,
                                  config.seed + 3)

        opt_g = torch.optim.Adam([
            {"params": generator.parameters(), "lr": config.lr_demosaic},
            {"params": rgb.parameters(), "lr": config.lr_rgb},
            {"params": spectral.parameters(), "lr": config.lr_spectral},
        ], betas=config.adam_betas)
        opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_rgb,
                                 betas=config.adam_betas)

        w = config.weights
        k = spec.pattern.period
        step0 = int(init.get("step", 0))
        for step in range(1, steps + 1):
            lin, raw = _split_stack_batch(mosaic_sampler.batch(config.batch_size))
            real = torch.from_numpy(rgb_sampler.batch(config.batch_size))

            cube = generator(lin, raw)
            fake = rgb(cube)

            d_loss = L.gan_discriminator_loss(discriminator(real),
                                              discriminator(fake.detach()))
            _check_finite(d_loss, "discriminator loss")
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            components = LossComponents(
                sgc=L.sgc_loss(cube),
                tv=L.tv_loss(cube),
                ips=L.ips_loss(cube, k),
                gan=L.gan_generator_loss(discriminator(fake)),
                cyc=L.cycle_loss(spectral(fake), cube),
            )
            g_loss = L.total_loss(components, w)
            _check_finite(g_loss, "generator-side loss")
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()

            if checkpoint_dir is not None and (step % config.checkpoint_every == 0
                                               or step == steps):
                periodic = assemble_checkpoint(
                    generator, rgb, spectral, spec, config, step=step0 + step,
                    discriminator=discriminator,
                    optimizers={"generator_side": opt_g.state_dict(),
                                "discriminator": opt_d.state_dict()})
                save_checkpoint(periodic,
                                f"{checkpoint_dir}/checkpoint_{step0 + step:06d}.pt")

        return assemble_checkpoint(
            generator, rgb, spectral, spec, config, step=step0 + steps,
            discriminator=discriminator,
            optimizers={"generator_side": opt_g.state_dict(),
                        "discriminator": opt_d.state_dict()})


def held_out_metrics(generator: DemosaicGenerator, scenes: Sequence[Hypercube],
                     pattern: MsfaPattern) -> dict[str, float]:
    """PSNR against ground truth and gridding score on a held-out scene set."""
    from .evaluation import ips_artifact_metric, psnr
    from .mosaic import simulate_mosaic

    psnr_model, psnr_linear, ips_model = [], [], []
    generator.eval()
    with torch.no_grad():
        for scene in scenes:
            mosaic = simulate_mosaic(scene, pattern)
            lin = linear_demosaic(mosaic, scene.band_centers)
            out = generator(torch.from_numpy(np.array(lin.values)),
                            torch.from_numpy(np.array(mosaic.values))).numpy()
            psnr_model.append(psnr(out, scene.values))
            psnr_linear.append(psnr(lin.values, scene.values))
            ips_model.append(ips_artifact_metric(out, pattern.period))
    return {
        "psnr_model": float(np.mean(psnr_model)),
        "psnr_linear": float(np.mean(psnr_linear)),
        "ips_model": float(np.mean(ips_model)),
    }
