"""The two optimization loops: derain-model training and attack training.

Derain training minimizes L1 - ssim_weight * SSIM with Adam under a cosine
learning-rate decay. Attack training freezes the derain weights and, per
minibatch, draws a fresh noise block, generates a flow field, warps and
clips the observations, and descends the attack loss through the derain
net, the warp, and the generator (Adam with decoupled L2 weight decay).
Training math runs in float32; both loops are bit-deterministic for fixed
seeds on a fixed platform.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, nets
from .autodiff import Tensor
from .errors import ConfigError, DataError, GeometryError, NumericError
from .metrics import DEFAULT_SSIM, SsimParams
from .seeding import derive_seed
from .warp import FlowField, transform_graph


@dataclass(frozen=True)
class DerainHyper:
    """Derain-training knobs. Paper-scale values: lr 1e-3 to 1e-5 over 100
    epochs at batch 16; desk-scale default shrinks epochs to 50."""

    learning_rate: float = 1e-3
    min_learning_rate: float = 1e-5
    epochs: int = 50
    batch_size: int = 16
    ssim_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= self.min_learning_rate > 0:
            raise ConfigError("need learning_rate >= min_learning_rate > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.ssim_weight < 0:
            raise ConfigError("ssim_weight must be >= 0")


@dataclass(frozen=True)
class AttackHyper:
    """Attack-training knobs. Paper-scale values: lr 0.01, batch 100, 200
    epochs, L2 weight 1e-3, Adam betas (0.5, 0.9); desk-scale default uses
    batch 16 over 50 epochs."""

    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 16
    l2_weight: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    clean_weight: float = 1.0
    warp_mapping: str = "centered"
    budget_px: float = 2.0
    canonical_z_seed: int = 77
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.l2_weight < 0:
            raise ConfigError("learning_rate must be > 0 and l2_weight >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.clean_weight < 0:
            raise ConfigError("clean_weight must be >= 0")


@dataclass
class TrainLog:
    """Per-epoch records: (epoch index, mean loss, probe SSIM, seconds)."""

    rows: list = field(default_factory=list)

    def append(self, epoch: int, loss: float, probe_ssim: float,
               seconds: float):
        if self.rows and epoch <= self.rows[-1][0]:
            raise DataError("epoch indices must be strictly increasing")
        self.rows.append((epoch, loss, probe_ssim, seconds))

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "probe_ssim", "seconds"])
            for epoch, loss, probe, seconds in self.rows:
                writer.writerow([epoch, repr(loss), repr(probe),
                                 repr(seconds)])


class Adam:
    """Adam with decoupled weight decay (the decay never enters the moments)."""

    def __init__(self, weights: dict, beta1: float = 0.9, beta2: float = 0.999,
                 weight_decay: float = 0.0, eps: float = 1e-8):
        self.weights = weights
        self.beta1, self.beta2 = beta1, beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, grads: dict, lr: float):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, w in self.weights.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * w
            w -= lr * update


def cosine_lr(epoch: int, total_epochs: int, lr: float,
              min_lr: float) -> float:
    """Monotone cosine decay from lr (first epoch) to min_lr (last epoch)."""
    if total_epochs <= 1:
        return lr
    t = epoch / (total_epochs - 1)
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + np.cos(np.pi * t))


def _stack_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise DataError("dataset is empty")
    h, w = dataset[0].observation.height, dataset[0].observation.width
    for s in dataset:
        if (s.observation.height, s.observation.width) != (h, w):
            raise GeometryError(
                f"sample '{s.identifier}' is {s.observation.height}x"
                f"{s.observation.width}, expected {h}x{w}")
    obs = np.stack([s.observation.data for s in dataset]).astype(np.float32)
    bg = np.stack([s.background.data for s in dataset]).astype(np.float32)
    return obs, bg


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}")


def _zero_grads(tensors: dict):
    for t in tensors.values():
        t.grad = None


def _grad_dict(tensors: dict) -> dict:
    return {k: t.grad for k, t in tensors.items()}


def _probe_slice(dataset, probe):
    if probe is None:
        probe = dataset[:min(16, len(dataset))]
    return _stack_dataset(probe)


def train_derain(dataset, hyper: DerainHyper,
                 net_config: nets.DerainConfig | None = None,
                 probe=None, ssim_params: SsimParams = DEFAULT_SSIM,
                 checkpoint_dir=None, checkpoint_every: int = 0
                 ) -> tuple[nets.ModelParams, TrainLog]:
    """Fit the derain net on (observation, background) pairs.

    Deterministic for a fixed hyper.seed; epochs=0 returns the untouched
    initialization with an empty log.
    """
    obs, bg = _stack_dataset(dataset)
    cfg = net_config or nets.DerainConfig()
    params = nets.init_derain(cfg, derive_seed(hyper.seed, "derain-init"))
    tensors = nets.param_tensors(params, trainable=True)
    weights = {k: t.data for k, t in tensors.items()}
    optimizer = Adam(weights)
    shuffle_rng = np.random.default_rng(derive_seed(hyper.seed, "shuffle"))
    probe_obs, probe_bg = _probe_slice(dataset, probe)
    log = TrainLog()
    n = obs.shape[0]
    for epoch in range(1, hyper.epochs + 1):
        start = time.perf_counter()
        lr = cosine_lr(epoch - 1, hyper.epochs, hyper.learning_rate,
                       hyper.min_learning_rate)
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, hyper.batch_size):
            batch = order[lo:lo + hyper.batch_size]
            _zero_grads(tensors)
            pred = nets.derain_graph(tensors, Tensor(obs[batch]), cfg)
            loss = metrics.derain_loss(pred, Tensor(bg[batch]),
                                       hyper.ssim_weight, ssim_params)
            value = float(loss.data)
            _check_finite(value, "derain loss")
            loss.backward()
            optimizer.step(_grad_dict(tensors), lr)
            losses.append(value)
        probe_pred = nets.derain_batch(params, probe_obs)
        probe_ssim = float(metrics.ssim(Tensor(probe_pred),
                                        Tensor(probe_bg), ssim_params).data)
        log.append(epoch, float(np.mean(losses)), probe_ssim,
                   time.perf_counter() - start)
        if checkpoint_dir and checkpoint_every and epoch % checkpoint_every == 0:
            nets.save_params(params,
                             Path(checkpoint_dir) / f"derain_ep{epoch:04d}.urap")
    return params, log


def _attack_probe_ssim(gen_params, derain_params, hyper,
                       probe_obs, probe_bg, ssim_params) -> float:
    raw = canonical_flow_raw(gen_params, hyper).astype(np.float32)
    warped = transform_graph(Tensor(probe_obs), Tensor(raw),
                             hyper.warp_mapping, hyper.budget_px)
    adv_pred = nets.derain_batch(derain_params,
                                 np.clip(warped.data, 0.0, 1.0))
    return float(metrics.ssim(Tensor(adv_pred), Tensor(probe_bg),
                              ssim_params).data)


def train_attack(dataset, derain_params: nets.ModelParams,
                 hyper: AttackHyper,
                 gen_config: nets.GeneratorConfig | None = None,
                 probe=None, ssim_params: SsimParams = DEFAULT_SSIM,
                 checkpoint_dir=None, checkpoint_every: int = 0
                 ) -> tuple[nets.ModelParams, TrainLog]:
    """Train the universal flow generator against a frozen derain net.

    Per minibatch: draw noise, generate a flow, warp and clip the
    observations, then one Adam step on the attack loss. The derain
    weights are never written.
    """
    if derain_params.kind != nets.KIND_DERAIN:
        raise ConfigError(
            f"expected derain params as the target, got {derain_params.kind!r}")
    obs, bg = _stack_dataset(dataset)
    n, _, h, w = obs.shape
    cfg = gen_config or nets.GeneratorConfig(image_height=h, image_width=w)
    if (cfg.image_height, cfg.image_width) != (h, w):
        raise GeometryError(
            f"generator targets {cfg.image_height}x{cfg.image_width} but the "
            f"dataset is {h}x{w}")
    derain_cfg = derain_params.build_config()
    gen_params = nets.init_generator(cfg,
                                     derive_seed(hyper.seed, "generator-init"))
    gen_tensors = nets.param_tensors(gen_params, trainable=True)
    theta_tensors = nets.param_tensors(derain_params, trainable=False)
    optimizer = Adam({k: t.data for k, t in gen_tensors.items()},
                     beta1=hyper.adam_beta1, beta2=hyper.adam_beta2,
                     weight_decay=hyper.l2_weight)
    shuffle_rng = np.random.default_rng(derive_seed(hyper.seed, "shuffle"))
    z_rng = np.random.default_rng(derive_seed(hyper.seed, "noise"))
    probe_obs, probe_bg = _probe_slice(dataset, probe)

    # the target is frozen, so its unattacked restorations are constants
    pred_clean = np.empty_like(obs)
    for lo in range(0, n, hyper.batch_size):
        pred_clean[lo:lo + hyper.batch_size] = nets.derain_batch(
            derain_params, obs[lo:lo + hyper.batch_size])

    log = TrainLog()
    for epoch in range(1, hyper.epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, hyper.batch_size):
            batch = order[lo:lo + hyper.batch_size]
            z = z_rng.standard_normal(
                (1,) + cfg.noise_shape).astype(np.float32)
            _zero_grads(gen_tensors)
            raw = nets.generator_graph(gen_tensors, Tensor(z), cfg)[0]
            adv = transform_graph(Tensor(obs[batch]), raw,
                                  hyper.warp_mapping, hyper.budget_px)
            adv = adv.clip(0.0, 1.0)
            pred_adv = nets.derain_graph(theta_tensors, adv, derain_cfg)
            loss = metrics.attack_loss(pred_adv, Tensor(pred_clean[batch]),
                                       Tensor(bg[batch]),
                                       hyper.clean_weight, ssim_params)
            value = float(loss.data)
            _check_finite(value, "attack loss")
            loss.backward()
            optimizer.step(_grad_dict(gen_tensors), hyper.learning_rate)
            losses.append(value)
        probe_ssim = _attack_probe_ssim(gen_params, derain_params, hyper,
                                        probe_obs, probe_bg, ssim_params)
        log.append(epoch, float(np.mean(losses)), probe_ssim,
                   time.perf_counter() - start)
        if checkpoint_dir and checkpoint_every and epoch % checkpoint_every == 0:
            nets.save_params(gen_params,
                             Path(checkpoint_dir) / f"gen_ep{epoch:04d}.urap")
    return gen_params, log


def canonical_flow_raw(gen_params: nets.ModelParams,
                       hyper: AttackHyper) -> np.ndarray:
    """Raw flow for the canonical deployment noise block (2, H, W)."""
    cfg = gen_params.build_config()
    z = np.random.default_rng(hyper.canonical_z_seed).standard_normal(
        cfg.noise_shape)
    return nets.generator_forward(gen_params, z)


def export_universal_flow(gen_params: nets.ModelParams, hyper: AttackHyper,
                          h: int, w: int) -> FlowField:
    """The single deployable perturbation: the generator evaluated on a
    canonical noise block drawn from canonical_z_seed."""
    cfg = gen_params.build_config()
    if (cfg.image_height, cfg.image_width) != (h, w):
        raise GeometryError(
            f"generator emits {cfg.image_height}x{cfg.image_width} flows, "
            f"requested {h}x{w}")
    raw = canonical_flow_raw(gen_params, hyper)
    return FlowField(raw.astype(np.float32), hyper.warp_mapping,
                     hyper.budget_px)


def attack_probe_loss(gen_params: nets.ModelParams,
                      derain_params: nets.ModelParams, hyper: AttackHyper,
                      probe, ssim_params: SsimParams = DEFAULT_SSIM) -> float:
    """Attack loss on a probe set using the canonical noise block."""
    probe_obs, probe_bg = _stack_dataset(probe)
    raw = canonical_flow_raw(gen_params, hyper).astype(np.float32)
    warped = transform_graph(Tensor(probe_obs), Tensor(raw),
                             hyper.warp_mapping, hyper.budget_px)
    adv = np.clip(warped.data, 0.0, 1.0)
    pred_adv = nets.derain_batch(derain_params, adv)
    pred_clean = nets.derain_batch(derain_params, probe_obs)
    return float(metrics.attack_loss(Tensor(pred_adv), Tensor(pred_clean),
                                     Tensor(probe_bg), hyper.clean_weight,
                                     ssim_params).data)
