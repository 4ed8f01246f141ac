"""The two networks: a conditional energy function and a latent-code generator.

The energy net maps an image/map pair to one scalar per sample through a
conv-batchnorm-relu stack (3x3 stride 1, then two 4x4 stride 2, then 4x4
stride 1 down to one channel) and a two-layer fully connected head.  Batch
normalization always *normalizes with the running buffers*, so the energy of a
sample never depends on what else shares its batch and the landscape stays
fixed during a sampling chain; the buffers themselves are refreshed from batch
statistics only when a training pass asks for it (``update_stats=True``).

The generator is a three-stage conv encoder-decoder with skip connections.
The latent code is tiled to the bottleneck resolution, channel-concatenated
and fused by a 3x3 conv; the decoder upsamples (nearest, 2x) and ends in a
sigmoid, so outputs live strictly inside (0, 1).  It has no normalization
layers: it is a pure function of its inputs, which keeps latent inference and
recovery chains exactly reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import stream
from .tensor import Tensor


@dataclass(frozen=True)
class EnergyConfig:
    image_size: int = 32
    image_channels: int = 3
    base_width: int = 16
    fc_width: int = 100
    bn_momentum: float = 0.1

    @property
    def in_channels(self) -> int:
        return self.image_channels + 1  # image plus the map under scrutiny

    @property
    def final_spatial(self) -> int:
        s = self.image_size          # 3x3 stride 1 pad 1 keeps size
        s = _conv_out(s, 4, 2, 1)
        s = _conv_out(s, 4, 2, 1)
        s = _conv_out(s, 4, 1, 1)
        return s


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 32
    image_channels: int = 3
    base_width: int = 8
    latent_dim: int = 8

    @property
    def bottleneck(self) -> int:
        return self.image_size // 8  # three stride-2 stages


def _conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def he_std(fan_in: int) -> float:
    """Fan-in-scaled Gaussian std for relu-family activations."""
    return math.sqrt(2.0 / fan_in)


EBM_INIT_STD = 0.02  # batchnorm behind every conv makes the scale a free choice


@dataclass
class EnergyParams:
    """Named tensors of the energy net plus its normalization buffers."""

    config: EnergyConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    init_stds: dict[str, float] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors

    def state(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.tensors.items()}
        out.update(self.buffers)
        return out

    def frozen(self) -> "EnergyParams":
        """A view for sampling passes: shared arrays, no gradient tracking."""
        view = EnergyParams(self.config)
        view.tensors = {k: Tensor(t.data) for k, t in self.tensors.items()}
        view.buffers = self.buffers
        return view


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    init_stds: dict[str, float] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def frozen(self) -> "GeneratorParams":
        view = GeneratorParams(self.config)
        view.tensors = {k: Tensor(t.data) for k, t in self.tensors.items()}
        return view


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _gauss(seed: int, scope: str, name: str, shape, std: float) -> np.ndarray:
    g = stream(seed, scope, name)
    return (g.standard_normal(shape) * std).astype(T.get_default_dtype())


def _zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=T.get_default_dtype())


def init_energy_params(seed: int, config: EnergyConfig | None = None) -> EnergyParams:
    """Gaussian conv/fc weights (std 0.02), zero biases, identity batchnorm."""
    cfg = config or EnergyConfig()
    w = cfg.base_width
    p = EnergyParams(cfg)

    def conv(name: str, cin: int, cout: int, k: int):
        p.tensors[f"{name}.weight"] = Tensor(
            _gauss(seed, "energy", f"{name}.weight", (cout, cin, k, k), EBM_INIT_STD),
            requires_grad=True)
        p.tensors[f"{name}.bias"] = Tensor(_zeros(cout), requires_grad=True)
        p.tensors[f"{name}.bn.gamma"] = Tensor(np.ones(cout, dtype=T.get_default_dtype()),
                                               requires_grad=True)
        p.tensors[f"{name}.bn.beta"] = Tensor(_zeros(cout), requires_grad=True)
        p.buffers[f"{name}.bn.running_mean"] = _zeros(cout)
        p.buffers[f"{name}.bn.running_var"] = np.ones(cout, dtype=T.get_default_dtype())
        p.init_stds[f"{name}.weight"] = EBM_INIT_STD

    conv("b1", cfg.in_channels, w, 3)
    conv("b2", w, 2 * w, 4)
    conv("b3", 2 * w, 4 * w, 4)
    conv("b4", 4 * w, 1, 4)

    fc_in = cfg.final_spatial ** 2
    for name, (cin, cout) in {"fc1": (fc_in, cfg.fc_width), "fc2": (cfg.fc_width, 1)}.items():
        p.tensors[f"{name}.weight"] = Tensor(
            _gauss(seed, "energy", f"{name}.weight", (cin, cout), EBM_INIT_STD),
            requires_grad=True)
        p.tensors[f"{name}.bias"] = Tensor(_zeros(cout), requires_grad=True)
        p.init_stds[f"{name}.weight"] = EBM_INIT_STD
    return p


def init_generator_params(seed: int, config: GeneratorConfig | None = None) -> GeneratorParams:
    """Fan-in-scaled Gaussian conv weights, zero biases.

    The generator has no normalization layers, so a flat tiny std would shrink
    activations geometrically through nine convs; fan-in scaling keeps the
    forward signal and the backward signal at unit order.
    """
    cfg = config or GeneratorConfig()
    w, d = cfg.base_width, cfg.latent_dim
    p = GeneratorParams(cfg)

    def conv(name: str, cin: int, cout: int, k: int):
        std = he_std(cin * k * k)
        p.tensors[f"{name}.weight"] = Tensor(
            _gauss(seed, "generator", f"{name}.weight", (cout, cin, k, k), std),
            requires_grad=True)
        p.tensors[f"{name}.bias"] = Tensor(_zeros(cout), requires_grad=True)
        p.init_stds[f"{name}.weight"] = std

    conv("stem", cfg.image_channels, w, 3)
    conv("down1", w, 2 * w, 4)
    conv("down2", 2 * w, 4 * w, 4)
    conv("down3", 4 * w, 4 * w, 4)
    conv("inject", 4 * w + d, 4 * w, 3)
    conv("up1", 8 * w, 2 * w, 3)
    conv("up2", 4 * w, w, 3)
    conv("up3", 2 * w, w, 3)
    conv("head", w, 1, 3)
    return p


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _frozen_batchnorm(p: EnergyParams, name: str, x: Tensor, update_stats: bool) -> Tensor:
    rm = p.buffers[f"{name}.bn.running_mean"]
    rv = p.buffers[f"{name}.bn.running_var"]
    if update_stats:
        # side channel, outside the graph: fold this batch's statistics into
        # the buffers, then normalize with the refreshed buffers
        mom = p.config.bn_momentum
        mean = x.data.mean(axis=(0, 2, 3))
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        var = x.data.var(axis=(0, 2, 3))
        if m > 1:
            var = var * (m / (m - 1.0))
        rm *= (1.0 - mom)
        rm += mom * mean
        rv *= (1.0 - mom)
        rv += mom * var
    return T.batchnorm2d(x, p.tensors[f"{name}.bn.gamma"], p.tensors[f"{name}.bn.beta"],
                         rm, rv, training=False)


def energy_forward(p: EnergyParams, y: Tensor, x: Tensor, update_stats: bool = False) -> Tensor:
    """Per-sample energies [n] of maps ``y`` [n,1,H,W] given images ``x`` [n,C,H,W]."""
    cfg = p.config
    if y.ndim != 4 or y.shape[1] != 1:
        raise T.ShapeError("energy_forward", [y.shape], "map must be [n, 1, H, W]")
    if x.ndim != 4 or x.shape[0] != y.shape[0] or x.shape[1] != cfg.image_channels:
        raise T.ShapeError("energy_forward", [y.shape, x.shape], "image batch mismatch")
    if y.shape[2] != cfg.image_size or y.shape[3] != cfg.image_size:
        raise T.ShapeError("energy_forward", [y.shape], f"expects {cfg.image_size}px maps")

    t = T.concat([x, y], axis=1)
    specs = [("b1", 1, 1), ("b2", 2, 1), ("b3", 2, 1), ("b4", 1, 1)]
    for name, stride, pad in specs:
        t = T.conv2d(t, p.tensors[f"{name}.weight"], p.tensors[f"{name}.bias"],
                     stride=stride, pad=pad)
        t = T.relu(_frozen_batchnorm(p, name, t, update_stats))
    n = y.shape[0]
    t = T.reshape(t, (n, cfg.final_spatial ** 2))
    t = T.add(T.matmul(t, p.tensors["fc1.weight"]), p.tensors["fc1.bias"])
    t = T.relu(t)
    t = T.add(T.matmul(t, p.tensors["fc2.weight"]), p.tensors["fc2.bias"])
    return T.reshape(t, (n,))


def generator_forward(p: GeneratorParams, x: Tensor, h: Tensor) -> Tensor:
    """Predicted maps [n,1,H,W] from images ``x`` [n,C,H,W] and codes ``h`` [n,d]."""
    cfg = p.config
    if x.ndim != 4 or x.shape[1] != cfg.image_channels:
        raise T.ShapeError("generator_forward", [x.shape], "image must be [n, C, H, W]")
    if h.ndim != 2 or h.shape != (x.shape[0], cfg.latent_dim):
        raise T.ShapeError("generator_forward", [x.shape, h.shape],
                           f"latent must be [n, {cfg.latent_dim}]")

    def block(name: str, t: Tensor, stride: int, pad: int) -> Tensor:
        out = T.conv2d(t, p.tensors[f"{name}.weight"], p.tensors[f"{name}.bias"],
                       stride=stride, pad=pad)
        return T.leaky_relu(out, 0.2)

    e0 = block("stem", x, 1, 1)
    e1 = block("down1", e0, 2, 1)
    e2 = block("down2", e1, 2, 1)
    e3 = block("down3", e2, 2, 1)

    tiles = T.tile_to_map(h, cfg.bottleneck, cfg.bottleneck)
    z = block("inject", T.concat([e3, tiles], axis=1), 1, 1)

    u1 = block("up1", T.concat([T.upsample2x(z), e2], axis=1), 1, 1)
    u2 = block("up2", T.concat([T.upsample2x(u1), e1], axis=1), 1, 1)
    u3 = block("up3", T.concat([T.upsample2x(u2), e0], axis=1), 1, 1)
    out = T.conv2d(u3, p.tensors["head.weight"], p.tensors["head.bias"], stride=1, pad=1)
    return T.sigmoid(out)
