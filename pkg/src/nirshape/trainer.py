"""Alternating adversarial optimization with checkpointing and logging.

One iteration performs (a) a discriminator Adam step on real/generated
pairs with the generator frozen, then (b) a generator Adam step through
the freshly updated discriminator with its parameters frozen and its batch
norm switched to the statistics recorded in step (a), so both half-steps
of an iteration see consistent normalization.

Sampling is a pure function of (seed, stream position): per-direction
buckets are reshuffled each epoch and interleaved in a fixed direction
order, which keeps every window of 12k consecutive draws exactly balanced
across the 12 lighting directions and makes resumed runs bit-identical to
uninterrupted ones.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import losses as L
from . import synthdata
from .nets import (DiscriminatorNet, GeneratorNet, init_weights,
                   GENERATOR_FILTERS, DISCRIMINATOR_FILTERS)
from .optim import Adam, DivergedError
from .tensor import Tensor, no_grad


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class TrainingDiverged(RuntimeError):
    """A loss or gradient went non-finite."""

    def __init__(self, iteration, detail):
        super().__init__(f"training diverged at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_iterations: int = 46000
    lr0: float = 2e-4
    lr_decay: float = 0.95
    lr_decay_every: int = 5000
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_p: float = 1.0
    lambda_ang: float = 1.0
    lambda_curl: float = 1.0
    p_norm: int = 2
    seed: int = 0
    checkpoint_every: int = 5000
    g_filters: tuple = GENERATOR_FILTERS
    d_filters: tuple = DISCRIMINATOR_FILTERS
    pair_conditioning: bool = True
    stratify_lights: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.total_iterations < 1:
            raise ConfigError("total_iterations must be >= 1")
        self.g_filters = tuple(int(f) for f in self.g_filters)
        self.d_filters = tuple(int(f) for f in self.d_filters)

    def loss_weights(self):
        return L.LossWeights(self.lambda_p, self.lambda_ang,
                             self.lambda_curl, self.p_norm)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def lr_schedule(iteration, config):
    """Stepwise-decayed learning rate at a given iteration (0-based)."""
    if iteration < 0:
        raise ConfigError("iteration must be >= 0")
    return config.lr0 * config.lr_decay ** (iteration // config.lr_decay_every)


def build_models(config, dtype=np.float32):
    gen = GeneratorNet(filters=config.g_filters, dtype=dtype)
    disc = DiscriminatorNet(filters=config.d_filters,
                            pair_conditioning=config.pair_conditioning,
                            dtype=dtype)
    init_weights(gen, config.seed)
    init_weights(disc, config.seed + 1)
    opt_g = Adam(gen.parameters(), lr=config.lr0, beta1=config.beta1,
                 beta2=config.beta2, epsilon=config.adam_eps)
    opt_d = Adam(disc.parameters(), lr=config.lr0, beta1=config.beta1,
                 beta2=config.beta2, epsilon=config.adam_eps)
    return gen, disc, opt_g, opt_d


class BalancedSampler:
    """Deterministic stream of sample indices, stratified by light direction."""

    def __init__(self, manifest, split, seed, stratify=True):
        count = manifest.counts[split]
        if count < 1:
            raise ConfigError(f"split {split!r} of the dataset is empty")
        self.count = count
        self.seed = seed
        n_lights = sum(r[1] for r in manifest.light_rings)
        self.buckets = None
        if stratify:
            buckets = [[] for _ in range(n_lights)]
            for i in range(count):
                buckets[synthdata.sample_light_index(manifest, split, i)].append(i)
            if min(len(b) for b in buckets) > 0:
                self.buckets = [np.array(b) for b in buckets]
                # direction order fixed for the whole run: any window of
                # 12k consecutive draws then covers each direction exactly k times
                self.order = np.random.default_rng([seed, 3]).permutation(n_lights)

    def _draw(self, t):
        if self.buckets is None:
            epoch, pos = divmod(t, self.count)
            perm = np.random.default_rng([self.seed, 4, epoch]).permutation(self.count)
            return int(perm[pos])
        nb = len(self.buckets)
        slot = t % nb
        direction = int(self.order[slot])
        bucket = self.buckets[direction]
        k = t // nb  # how many draws this direction has already served
        epoch, pos = divmod(k, len(bucket))
        perm = np.random.default_rng([self.seed, 5, direction, epoch]).permutation(len(bucket))
        return int(bucket[perm[pos]])

    def batch(self, iteration, batch_size):
        base = iteration * batch_size
        return [self._draw(base + j) for j in range(batch_size)]


def train_step(z, y, gen, disc, opt_g, opt_d, config, iteration):
    """One alternation; returns the per-term loss report.

    `z` is (B,1,S,S) NIR, `y` is (B,3,S,S) encoded normals, both numpy.
    """
    lr = lr_schedule(iteration, config)
    zt = Tensor(z)
    yt = Tensor(y)
    weights = config.loss_weights()

    # one generator forward serves both half-steps: detached fakes for the
    # discriminator update, the taped graph for the generator update
    gen.zero_grad()
    disc.zero_grad()
    fake = gen.forward(zt, training=True)

    d_real = disc.forward(zt, Tensor(y), training=True)
    d_fake = disc.forward(zt, fake.detach(), training=True)
    d_loss = L.loss_discriminator(d_real, d_fake)
    if not np.isfinite(d_loss.item()):
        raise TrainingDiverged(iteration, "discriminator loss is not finite")
    d_loss.backward()
    opt_d.step(lr=lr)

    gen.zero_grad()
    disc.zero_grad()
    # discriminator parameters are frozen for this half-step: marking them
    # grad-free skips their (discarded) weight gradients entirely
    for p in disc.parameters():
        p.requires_grad = False
    try:
        d_fake2 = disc.forward(zt, fake, training=False)  # frozen batch-norm stats
        g_loss, breakdown = L.loss_generator(d_fake2, yt, fake, weights)
        if not np.isfinite(g_loss.item()):
            raise TrainingDiverged(iteration, "generator loss is not finite")
        g_loss.backward()
    finally:
        for p in disc.parameters():
            p.requires_grad = True
    try:
        opt_g.step(lr=lr)
    except DivergedError as exc:
        raise TrainingDiverged(iteration, str(exc)) from exc

    report = {"iteration": iteration, "d_loss": d_loss.item(),
              "g_total": g_loss.item(), "lr": lr}
    report.update(breakdown)
    return report


class _SplitCache:
    """Whole-split preload; one file read per sample for the entire run."""

    def __init__(self, dataset_dir, split, manifest):
        count = manifest.counts[split]
        self.nir, self.nrm = synthdata.load_batch(
            dataset_dir, split, range(count), manifest=manifest)

    def gather(self, indices):
        idx = np.asarray(indices)
        return self.nir[idx], self.nrm[idx]


def train(config, dataset_dir, out_dir, resume=None, quiet=True):
    """Run the full optimization; returns the final checkpoint path.

    Writes `losses.jsonl` (one JSON object per iteration) and
    `ckpt_<iter>.bin` every `checkpoint_every` iterations plus at the end.
    Resuming from a checkpoint continues the identical trajectory the
    uninterrupted run would have taken.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = synthdata.DatasetManifest.load(dataset_dir)
    if manifest.counts["train"] < 1:
        raise ConfigError(f"dataset {dataset_dir} has an empty train split")

    gen, disc, opt_g, opt_d = build_models(config)
    start = 0
    if resume is not None:
        start = ckpt.load_checkpoint(resume, gen, disc, opt_g, opt_d)

    sampler = BalancedSampler(manifest, "train", config.seed,
                              stratify=config.stratify_lights)
    cache = _SplitCache(dataset_dir, "train", manifest)
    echo = {"config": config.to_dict(), "dataset": str(dataset_dir)}

    log_path = out / "losses.jsonl"
    last_path = None
    with open(log_path, "a") as log:
        for it in range(start, config.total_iterations):
            z, y = cache.gather(sampler.batch(it, config.batch_size))
            report = train_step(z, y, gen, disc, opt_g, opt_d, config, it)
            log.write(json.dumps(report, sort_keys=True) + "\n")
            done = it + 1
            if done % config.checkpoint_every == 0 and done < config.total_iterations:
                last_path = out / f"ckpt_{done}.bin"
                ckpt.save_checkpoint(last_path, gen, disc, opt_g, opt_d, done, echo)
            if not quiet and done % 100 == 0:
                print(f"iter {done}: d={report['d_loss']:.4f} "
                      f"g={report['g_total']:.4f}")
    final = out / f"ckpt_{config.total_iterations}.bin"
    ckpt.save_checkpoint(final, gen, disc, opt_g, opt_d,
                         config.total_iterations, echo)
    return final
