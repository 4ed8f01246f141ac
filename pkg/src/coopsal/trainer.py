"""Joint training of the energy refiner and the latent-variable generator.

The fully supervised loop alternates, per batch: ancestral generation,
energy-space revision of the generated maps, latent inference warm-started
at the ancestral codes, an Adam step on the energy contrast (data versus
revised samples), and an Adam step on the generator's reconstruction of the
revised samples.  The weakly supervised loop first completes each scribble
annotation (masked latent inference, decode, energy revision) and feeds the
completion in place of ground truth; with a full observation mask it reduces
bitwise to the supervised loop.  Two ablations train the generator alone:
a deterministic encoder-decoder (latent path zeroed) under cross entropy,
and inference-based latent training against the data with no energy model.

Samples and inferred codes enter the losses as constants — no gradient flows
back through the sampling chains.  All per-iteration randomness is drawn
from streams keyed by (seed, purpose, epoch, batch), so runs are bitwise
reproducible and an interrupted run resumed from its checkpoint continues
on the exact trajectory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics, nets, persist, sampler
from . import tensor as T
from .rng import stream
from .sampler import LangevinConfig
from .tensor import Tensor

__all__ = [
    "TrainerError", "MODES", "TrainConfig", "CONFIG_KEYS", "parse_config",
    "load_config", "lambda_at", "lr_at", "AdamState", "init_adam", "adam_step",
    "ebm_loss", "lvm_loss", "HistoryRow", "History", "write_history_csv",
    "read_history_csv", "TrainState", "init_state", "state_checkpoint",
    "restore_state", "train_full", "train_weak", "train_ablation",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainerError(Exception):
    """Configuration or training-loop contract violation."""


MODES = ("coop-full", "coop-weak", "lvm-abp", "deterministic")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    mode: str = "coop-full"
    seed: int = 0
    epochs: int = 40
    batch_size: int = 8
    image_size: int = 32
    latent_dim: int = 8
    sigma: float = 0.3
    lambda0: float = 1.0
    lr_g: float = 5e-5
    lr_e: float = 1e-3
    lr_decay_factor: float = 0.9
    lr_decay_interval: int = 20
    k_steps_y: int = 5
    step_size_y: float = 0.4
    k_steps_h: int = 5
    step_size_h: float = 0.1
    noise_enabled: bool = True
    dataset_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainerError(f"unknown mode '{self.mode}' (expected one of {MODES})")
        for name in ("epochs", "batch_size", "latent_dim", "lr_decay_interval"):
            if getattr(self, name) < 1:
                raise TrainerError(f"{name} must be >= 1")
        for name in ("sigma", "lr_g", "lr_e", "step_size_y", "step_size_h"):
            if not getattr(self, name) > 0:
                raise TrainerError(f"{name} must be positive")
        if self.lambda0 < 0:
            raise TrainerError("lambda0 must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise TrainerError("lr_decay_factor must be in (0, 1]")
        if self.k_steps_y < 0 or self.k_steps_h < 0:
            raise TrainerError("chain step counts must be >= 0")
        if self.image_size < 8 or self.image_size % 8:
            raise TrainerError("image_size must be a positive multiple of 8")

    def as_dict(self) -> dict[str, str]:
        """String form of every field, lossless for floats (repr)."""
        out = {}
        for key in CONFIG_KEYS:
            value = getattr(self, key)
            if isinstance(value, bool):
                out[key] = "true" if value else "false"
            elif isinstance(value, float):
                out[key] = repr(value)
            else:
                out[key] = str(value)
        return out


_INT_KEYS = ("seed", "epochs", "batch_size", "image_size", "latent_dim",
             "lr_decay_interval", "k_steps_y", "k_steps_h")
_FLOAT_KEYS = ("sigma", "lambda0", "lr_g", "lr_e", "lr_decay_factor",
               "step_size_y", "step_size_h")
_STR_KEYS = ("mode", "dataset_dir", "out_dir")
CONFIG_KEYS = ("mode", "seed", "epochs", "batch_size", "image_size",
               "latent_dim", "sigma", "lambda0", "lr_g", "lr_e",
               "lr_decay_factor", "lr_decay_interval", "k_steps_y",
               "step_size_y", "k_steps_h", "step_size_h", "noise_enabled",
               "dataset_dir", "out_dir")


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "noise_enabled":
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        return raw
    except ValueError:
        raise TrainerError(f"bad value for config key '{key}': {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    """Flat key=value config; full-line # comments; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise TrainerError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise TrainerError(f"unknown config key '{key}'")
        if key in values:
            raise TrainerError(f"duplicate config key '{key}'")
        values[key] = _parse_value(key, value)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def lambda_at(lambda0: float, iteration: int, total_iterations: int) -> float:
    """Auxiliary-loss weight: linear from lambda0 at 0 down to 0 at the end."""
    if total_iterations < 1:
        raise TrainerError("total_iterations must be >= 1")
    return lambda0 * max(0.0, 1.0 - iteration / total_iterations)


def lr_at(lr0: float, epoch: int, factor: float, interval: int) -> float:
    return lr0 * factor ** (epoch // interval)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(tensors: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(t.data) for k, t in tensors.items()},
        v={k: np.zeros_like(t.data) for k, t in tensors.items()},
    )


def adam_step(tensors: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> None:
    """One bias-corrected Adam update, in place.

    Every gradient is checked before anything is touched, so a non-finite
    gradient aborts the whole step with the offending tensor's name.
    """
    for name in tensors:
        if name not in grads:
            raise TrainerError(f"missing gradient for tensor '{name}'")
        if not np.all(np.isfinite(grads[name])):
            raise TrainerError(f"non-finite gradient for tensor '{name}'")
    state.step += 1
    correct1 = 1.0 - beta1 ** state.step
    correct2 = 1.0 - beta2 ** state.step
    for name, t in tensors.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        t.data = t.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(t.dtype)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ebm_loss(params_e, y_data: np.ndarray, y_samples: np.ndarray, x: np.ndarray,
             update_stats: bool = True, forward=nets.energy_forward) -> Tensor:
    """Contrastive energy objective: mean U(data) - mean U(samples).

    Minimizing it raises sampled-map energies relative to data energies,
    i.e. ascends the data likelihood.  Samples are constants here.  The data
    pass optionally refreshes normalization statistics; the sample pass
    never does.
    """
    if np.asarray(y_data).shape[0] == 0:
        raise TrainerError("empty batch")
    u_data = forward(params_e, Tensor(np.asarray(y_data)), Tensor(np.asarray(x)),
                     update_stats=update_stats)
    u_samples = forward(params_e, Tensor(np.asarray(y_samples)), Tensor(np.asarray(x)))
    return T.sub(T.mean_all(u_data), T.mean_all(u_samples))


def lvm_loss(params_g, y_samples: np.ndarray, h_samples: np.ndarray, x: np.ndarray,
             y_data: np.ndarray, sigma: float, lam: float,
             mask: np.ndarray | None = None, forward=nets.generator_forward) -> Tensor:
    """Generator objective: reconstruction of the revised samples plus an
    annealed cross-entropy pull toward the labels.

    The first term is the batch mean of per-sample squared error scaled by
    1/(2 sigma^2); the second is pixel-mean binary cross entropy against
    ``y_data`` weighted by ``lam`` (restricted to ``mask`` when given).
    """
    if not sigma > 0:
        raise TrainerError(f"sigma must be positive, got {sigma}")
    y_samples = np.asarray(y_samples)
    if y_samples.shape[0] == 0:
        raise TrainerError("empty batch")
    g_out = forward(params_g, Tensor(np.asarray(x)), Tensor(np.asarray(h_samples)))
    diff = T.sub(Tensor(y_samples), g_out)
    scale = 1.0 / (2.0 * sigma * sigma * y_samples.shape[0])
    loss = T.mul_scalar(T.sum_all(T.square(diff)), scale)
    if lam > 0:
        ce = T.binary_cross_entropy(g_out, Tensor(np.asarray(y_data)), mask=mask)
        loss = T.add(loss, T.mul_scalar(ce, lam))
    return loss


def _grads(loss: Tensor, tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for t in tensors.values():
        t.zero_grad()
    loss.backward()
    return {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in tensors.items()}


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    iteration: int
    ebm_loss: float
    lvm_loss: float
    train_mae: float


@dataclass
class History:
    rows: list = field(default_factory=list)
    skipped_samples: int = 0  # weak mode: encounters of all-zero masks


def _history_csv_text(history: History) -> str:
    lines = ["epoch,iter,ebm_loss,lvm_loss,train_mae"]
    for r in history.rows:
        lines.append(f"{r.epoch},{r.iteration},{r.ebm_loss!r},{r.lvm_loss!r},{r.train_mae!r}")
    return "\n".join(lines) + "\n"


def write_history_csv(history: History, path) -> None:
    persist.atomic_write(path, _history_csv_text(history).encode())


def read_history_csv(path) -> History:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "epoch,iter,ebm_loss,lvm_loss,train_mae":
        raise TrainerError(f"not a history file: {path}")
    history = History()
    for line in lines[1:]:
        epoch, iteration, el, gl, mae = line.split(",")
        history.rows.append(HistoryRow(int(epoch), int(iteration),
                                       float(el), float(gl), float(mae)))
    return history


# ---------------------------------------------------------------------------
# training state and checkpoints
# ---------------------------------------------------------------------------

def _needs_energy(mode: str) -> bool:
    return mode in ("coop-full", "coop-weak")


@dataclass
class TrainState:
    config: TrainConfig
    params_g: nets.GeneratorParams
    params_e: nets.EnergyParams | None
    adam_g: AdamState
    adam_e: AdamState | None
    epoch: int = 0        # next epoch to run
    iteration: int = 0    # global iterations completed
    # lvm-abp only: per-sample latent codes, carried across epochs so each
    # inference chain continues where the last one stopped
    abp_latents: np.ndarray | None = None


def init_state(config: TrainConfig, image_channels: int = 3,
               energy_config: nets.EnergyConfig | None = None,
               generator_config: nets.GeneratorConfig | None = None) -> TrainState:
    gcfg = generator_config or nets.GeneratorConfig(
        image_size=config.image_size, image_channels=image_channels,
        latent_dim=config.latent_dim)
    if gcfg.image_size != config.image_size or gcfg.latent_dim != config.latent_dim:
        raise TrainerError("generator architecture disagrees with the train config")
    params_g = nets.init_generator_params(config.seed, gcfg)
    if config.mode == "deterministic":
        # sever the latent path: its weight columns see only zero codes and
        # therefore receive exactly zero gradient, so they stay zero
        w = params_g.tensors["inject.weight"]
        w.data[:, 4 * gcfg.base_width:, :, :] = 0.0
    params_e = None
    adam_e = None
    if _needs_energy(config.mode):
        ecfg = energy_config or nets.EnergyConfig(
            image_size=config.image_size, image_channels=image_channels)
        if ecfg.image_size != config.image_size:
            raise TrainerError("energy architecture disagrees with the train config")
        params_e = nets.init_energy_params(config.seed, ecfg)
        adam_e = init_adam(params_e.tensors)
    return TrainState(config=config, params_g=params_g, params_e=params_e,
                      adam_g=init_adam(params_g.tensors), adam_e=adam_e)


def state_checkpoint(state: TrainState) -> persist.Checkpoint:
    """Everything needed to continue training on the exact trajectory."""
    cfg = state.config
    # copies, not views: optimizer moments are mutated in place, so a live
    # reference would let an in-memory checkpoint drift with further training
    tensors: dict[str, np.ndarray] = {}
    for name, t in state.params_g.tensors.items():
        tensors[f"g.{name}"] = t.data.copy()
    for name, arr in state.adam_g.m.items():
        tensors[f"adam_g.m.{name}"] = arr.copy()
    for name, arr in state.adam_g.v.items():
        tensors[f"adam_g.v.{name}"] = arr.copy()
    if state.params_e is not None:
        for name, t in state.params_e.tensors.items():
            tensors[f"e.{name}"] = t.data.copy()
        for name, arr in state.params_e.buffers.items():
            tensors[f"e.{name}"] = arr.copy()
        for name, arr in state.adam_e.m.items():
            tensors[f"adam_e.m.{name}"] = arr.copy()
        for name, arr in state.adam_e.v.items():
            tensors[f"adam_e.v.{name}"] = arr.copy()
    if state.abp_latents is not None:
        tensors["abp.latents"] = state.abp_latents.copy()
    meta = dict(cfg.as_dict())
    gcfg = state.params_g.config
    meta["image_channels"] = str(gcfg.image_channels)
    meta["gen.base_width"] = str(gcfg.base_width)
    meta["adam_g.step"] = str(state.adam_g.step)
    if state.params_e is not None:
        ecfg = state.params_e.config
        meta["energy.base_width"] = str(ecfg.base_width)
        meta["energy.fc_width"] = str(ecfg.fc_width)
        meta["energy.bn_momentum"] = repr(ecfg.bn_momentum)
        meta["adam_e.step"] = str(state.adam_e.step)
    return persist.Checkpoint(tensors=tensors, config=meta, seed=cfg.seed,
                              epoch=state.epoch, iteration=state.iteration)


def config_from_checkpoint(ckpt: persist.Checkpoint) -> TrainConfig:
    values = {}
    for key in CONFIG_KEYS:
        if key not in ckpt.config:
            raise persist.PersistError(f"checkpoint metadata missing config key '{key}'")
        values[key] = _parse_value(key, ckpt.config[key])
    return TrainConfig(**values)


def restore_state(ckpt: persist.Checkpoint) -> TrainState:
    """Rebuild the architecture recorded in the checkpoint and load into it.

    Any mismatch — unexpected name, missing name, wrong shape — fails loudly.
    """
    cfg = config_from_checkpoint(ckpt)
    meta = ckpt.config
    channels = int(meta.get("image_channels", "3"))
    gcfg = nets.GeneratorConfig(
        image_size=cfg.image_size, image_channels=channels,
        base_width=int(meta.get("gen.base_width", "8")), latent_dim=cfg.latent_dim)
    ecfg = None
    if _needs_energy(cfg.mode):
        ecfg = nets.EnergyConfig(
            image_size=cfg.image_size, image_channels=channels,
            base_width=int(meta.get("energy.base_width", "16")),
            fc_width=int(meta.get("energy.fc_width", "100")),
            bn_momentum=float(meta.get("energy.bn_momentum", "0.1")))
    state = init_state(cfg, image_channels=channels,
                       energy_config=ecfg, generator_config=gcfg)

    expected: dict[str, np.ndarray] = {}
    for name, t in state.params_g.tensors.items():
        expected[f"g.{name}"] = t.data
    for name in state.params_g.tensors:
        expected[f"adam_g.m.{name}"] = state.adam_g.m[name]
        expected[f"adam_g.v.{name}"] = state.adam_g.v[name]
    if state.params_e is not None:
        for name, t in state.params_e.tensors.items():
            expected[f"e.{name}"] = t.data
        for name, arr in state.params_e.buffers.items():
            expected[f"e.{name}"] = arr
        for name in state.params_e.tensors:
            expected[f"adam_e.m.{name}"] = state.adam_e.m[name]
            expected[f"adam_e.v.{name}"] = state.adam_e.v[name]

    stored_latents = ckpt.tensors.get("abp.latents")
    if stored_latents is not None:
        state.abp_latents = stored_latents.copy()
    for name in ckpt.tensors:
        if name not in expected and name != "abp.latents":
            raise persist.UnknownTensorError(f"unexpected tensor '{name}' for this architecture")
    for name, target in expected.items():
        if name not in ckpt.tensors:
            raise persist.UnknownTensorError(f"checkpoint is missing tensor '{name}'")
        stored = ckpt.tensors[name]
        if stored.shape != target.shape:
            raise persist.UnknownTensorError(
                f"tensor '{name}' has shape {stored.shape}, expected {target.shape}")
        target[...] = stored
    state.adam_g.step = int(meta.get("adam_g.step", "0"))
    if state.adam_e is not None:
        state.adam_e.step = int(meta.get("adam_e.step", "0"))
    state.epoch = ckpt.epoch
    state.iteration = ckpt.iteration
    return state


def _resolve_state(dataset, config: TrainConfig, state, resume) -> TrainState:
    if state is not None and resume is not None:
        raise TrainerError("pass either state or resume, not both")
    if resume is not None:
        ckpt = resume if isinstance(resume, persist.Checkpoint) else persist.load_checkpoint(resume)
        restored = restore_state(ckpt)
        if restored.config != config:
            raise TrainerError("resume checkpoint was trained under a different config")
        return restored
    if state is not None:
        return state
    return init_state(config, image_channels=dataset.images.shape[1])


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _check_dataset(dataset, kind: str) -> None:
    if dataset.count == 0:
        raise TrainerError("dataset is empty")
    if dataset.kind != kind:
        raise TrainerError(f"dataset kind '{dataset.kind}' cannot train this mode "
                           f"(needs '{kind}')")


def _batches(count: int, batch_size: int, seed: int, epoch: int):
    perm = stream(seed, "shuffle", epoch).permutation(count)
    for start in range(0, count, batch_size):
        yield perm[start:start + batch_size]


def _chain_cfg(steps: int, step_size: float, noise: bool, path: tuple) -> LangevinConfig:
    return LangevinConfig(steps, step_size, noise_enabled=noise,
                          rng_stream=path if noise else None)


def _total_iterations(count: int, config: TrainConfig) -> int:
    return config.epochs * math.ceil(count / config.batch_size)


def _save_artifacts(state: TrainState, history: History) -> None:
    out = state.config.out_dir
    if not out:
        return
    os.makedirs(out, exist_ok=True)
    persist.save_checkpoint(state_checkpoint(state), os.path.join(out, "checkpoint.ckpt"))
    write_history_csv(history, os.path.join(out, "history.csv"))


def _preload_history(state: TrainState) -> History:
    """A resumed session appends to the history its checkpoint left behind."""
    path = os.path.join(state.config.out_dir, "history.csv") if state.config.out_dir else ""
    if state.epoch > 0 and path and os.path.exists(path):
        prior = read_history_csv(path)
        prior.rows = [r for r in prior.rows if r.epoch < state.epoch]
        return prior
    return History()


def _session_end(config: TrainConfig, stop_epoch: int | None) -> int:
    if stop_epoch is None:
        return config.epochs
    if not 0 < stop_epoch <= config.epochs:
        raise TrainerError(f"stop_epoch must be in [1, {config.epochs}]")
    return stop_epoch


def _wrap_divergence(exc: sampler.ChainDivergedError, epoch: int, batch: int):
    raise TrainerError(f"{exc} (epoch {epoch}, batch {batch})") from exc


def _coop_updates(state: TrainState, x: np.ndarray, y_ebm_data: np.ndarray,
                  bce_target: np.ndarray, bce_mask: np.ndarray | None,
                  total_iters: int, epoch: int, batch: int,
                  lr_e: float, lr_g: float) -> tuple[float, float, float]:
    """The shared cooperative step: sample, revise, infer, two Adam updates.

    ``y_ebm_data`` plays the data role in the energy contrast; under full
    supervision it is the ground truth, under weak supervision the blended
    recovery.  Returns (ebm loss, lvm loss, batch MAE of revised samples).
    """
    cfg = state.config
    cfg_y = _chain_cfg(cfg.k_steps_y, cfg.step_size_y, cfg.noise_enabled,
                       (cfg.seed, "chain-y", epoch, batch))
    cfg_h = _chain_cfg(cfg.k_steps_h, cfg.step_size_h, cfg.noise_enabled,
                       (cfg.seed, "chain-h", epoch, batch))
    try:
        coop = sampler.cooperative_sample(state.params_g, state.params_e, x, cfg_y,
                                          latent_stream=(cfg.seed, "latent", epoch, batch))
        h_inferred = sampler.langevin_infer_h(state.params_g, coop.y_refined, x,
                                              coop.h, cfg.sigma, cfg_h)
    except sampler.ChainDivergedError as exc:
        _wrap_divergence(exc, epoch, batch)

    loss_e = ebm_loss(state.params_e, y_ebm_data, coop.y_refined, x, update_stats=True)
    adam_step(state.params_e.tensors, _grads(loss_e, state.params_e.tensors),
              state.adam_e, lr_e)

    lam = lambda_at(cfg.lambda0, state.iteration, total_iters)
    loss_g = lvm_loss(state.params_g, coop.y_refined, h_inferred, x,
                      bce_target, cfg.sigma, lam, mask=bce_mask)
    adam_step(state.params_g.tensors, _grads(loss_g, state.params_g.tensors),
              state.adam_g, lr_g)
    return (float(loss_e.data), float(loss_g.data),
            metrics.mae(sampler.clamp01(coop.y_refined), y_ebm_data))


def train_full(dataset, config: TrainConfig, state: TrainState | None = None,
               resume=None, stop_epoch: int | None = None):
    """Fully supervised cooperative training.

    Returns (energy params, generator params, history).  ``stop_epoch`` ends
    the session early (training in installments); pass the saved checkpoint
    as ``resume`` later to continue on the identical trajectory.
    """
    _check_dataset(dataset, "full")
    if config.mode != "coop-full":
        raise TrainerError(f"train_full needs mode 'coop-full', got '{config.mode}'")
    state = _resolve_state(dataset, config, state, resume)
    total_iters = _total_iterations(dataset.count, config)
    history = _preload_history(state)
    for epoch in range(state.epoch, _session_end(config, stop_epoch)):
        lr_e = lr_at(config.lr_e, epoch, config.lr_decay_factor, config.lr_decay_interval)
        lr_g = lr_at(config.lr_g, epoch, config.lr_decay_factor, config.lr_decay_interval)
        for b, idx in enumerate(_batches(dataset.count, config.batch_size,
                                         config.seed, epoch)):
            le, lg, err = _coop_updates(
                state, dataset.images[idx], dataset.saliency[idx],
                dataset.saliency[idx], None, total_iters, epoch, b, lr_e, lr_g)
            history.rows.append(HistoryRow(epoch, state.iteration, le, lg, err))
            state.iteration += 1
        state.epoch = epoch + 1
        _save_artifacts(state, history)
    return state.params_e, state.params_g, history


def train_weak(dataset, config: TrainConfig, state: TrainState | None = None,
               resume=None, stop_epoch: int | None = None):
    """Cooperative training from scribble annotations.

    Each iteration completes the visible pixels into a full pseudo-label
    (masked latent inference, decode, energy revision, then observed pixels
    reimposed) and runs the supervised step with the pseudo-labels as data.
    Samples whose observation mask is empty are skipped and counted.
    """
    _check_dataset(dataset, "weak")
    if config.mode != "coop-weak":
        raise TrainerError(f"train_weak needs mode 'coop-weak', got '{config.mode}'")
    state = _resolve_state(dataset, config, state, resume)
    total_iters = _total_iterations(dataset.count, config)
    history = _preload_history(state)
    for epoch in range(state.epoch, _session_end(config, stop_epoch)):
        lr_e = lr_at(config.lr_e, epoch, config.lr_decay_factor, config.lr_decay_interval)
        lr_g = lr_at(config.lr_g, epoch, config.lr_decay_factor, config.lr_decay_interval)
        for b, idx in enumerate(_batches(dataset.count, config.batch_size,
                                         config.seed, epoch)):
            usable = np.array([dataset.masks[i].any() for i in idx])
            history.skipped_samples += int((~usable).sum())
            idx = idx[usable]
            if idx.size == 0:
                state.iteration += 1
                continue
            x = dataset.images[idx]
            y_partial = dataset.saliency[idx]
            observed = dataset.masks[idx]
            # Recovery is inference, not sampling: both chains run as pure
            # descent so the pseudo-labels feeding ebm_loss stay noise-free.
            cfg_rec_h = sampler.LangevinConfig(steps=config.k_steps_h,
                                               step_size=config.step_size_h,
                                               noise_enabled=False)
            cfg_rec_y = sampler.LangevinConfig(steps=config.k_steps_y,
                                               step_size=config.step_size_y,
                                               noise_enabled=False)
            try:
                rec = sampler.recover(state.params_g, state.params_e, y_partial,
                                      observed, x, config.sigma, cfg_rec_h, cfg_rec_y,
                                      init_stream=(config.seed, "rec-init", epoch, b))
            except sampler.ChainDivergedError as exc:
                _wrap_divergence(exc, epoch, b)
            # pseudo-labels are maps: annotation where observed, clamped
            # recovery elsewhere (the revision chain is unconstrained)
            pseudo = np.where(observed.astype(bool), y_partial,
                              sampler.clamp01(rec.y_refined))
            le, lg, err = _coop_updates(
                state, x, pseudo, y_partial, observed,
                total_iters, epoch, b, lr_e, lr_g)
            history.rows.append(HistoryRow(epoch, state.iteration, le, lg, err))
            state.iteration += 1
        state.epoch = epoch + 1
        _save_artifacts(state, history)
    return state.params_e, state.params_g, history


def train_ablation(dataset, config: TrainConfig, state: TrainState | None = None,
                   resume=None, stop_epoch: int | None = None):
    """Generator-only baselines.

    deterministic: cross entropy against the labels with the latent path
    zeroed, so the output depends on the image alone.  lvm-abp: infer codes
    from the labels each iteration, then take the reconstruction step
    against the labels — the generator trains with no energy model.
    Returns (generator params, history).
    """
    _check_dataset(dataset, "full")
    if config.mode not in ("deterministic", "lvm-abp"):
        raise TrainerError(f"train_ablation needs mode 'deterministic' or 'lvm-abp', "
                           f"got '{config.mode}'")
    state = _resolve_state(dataset, config, state, resume)
    history = _preload_history(state)
    d = state.params_g.config.latent_dim
    if config.mode == "lvm-abp":
        if state.abp_latents is None:
            state.abp_latents = np.stack(
                [stream(config.seed, "abp-init", i).standard_normal(d)
                 for i in range(dataset.count)]).astype(T.get_default_dtype())
        elif state.abp_latents.shape != (dataset.count, d):
            raise TrainerError("checkpointed latent codes do not match this dataset")
    for epoch in range(state.epoch, _session_end(config, stop_epoch)):
        lr_g = lr_at(config.lr_g, epoch, config.lr_decay_factor, config.lr_decay_interval)
        for b, idx in enumerate(_batches(dataset.count, config.batch_size,
                                         config.seed, epoch)):
            x = dataset.images[idx]
            y = dataset.saliency[idx]
            if config.mode == "deterministic":
                h = np.zeros((x.shape[0], d), dtype=T.get_default_dtype())
                g_out = nets.generator_forward(state.params_g, Tensor(x), Tensor(h))
                loss_g = T.binary_cross_entropy(g_out, Tensor(y))
                recon = g_out.data
            else:
                h0 = state.abp_latents[idx]
                cfg_h = _chain_cfg(config.k_steps_h, config.step_size_h,
                                   config.noise_enabled,
                                   (config.seed, "chain-h", epoch, b))
                try:
                    h = sampler.langevin_infer_h(state.params_g, y, x, h0,
                                                 config.sigma, cfg_h)
                except sampler.ChainDivergedError as exc:
                    _wrap_divergence(exc, epoch, b)
                state.abp_latents[idx] = h
                loss_g = lvm_loss(state.params_g, y, h, x, y, config.sigma, lam=0.0)
                recon = nets.generator_forward(state.params_g.frozen(),
                                               Tensor(x), Tensor(h)).data
            adam_step(state.params_g.tensors, _grads(loss_g, state.params_g.tensors),
                      state.adam_g, lr_g)
            history.rows.append(HistoryRow(epoch, state.iteration, 0.0,
                                           float(loss_g.data), metrics.mae(recon, y)))
            state.iteration += 1
        state.epoch = epoch + 1
        _save_artifacts(state, history)
    return state.params_g, history
