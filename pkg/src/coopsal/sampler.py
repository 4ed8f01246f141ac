"""Langevin chains over saliency maps and latent codes.

Everything iterative lives here: gradient-based revision of a saliency map
under the energy network, posterior inference of a generator latent (with an
optional visibility mask for partial annotations), coarse-to-fine cooperative
sampling, recovery of incomplete annotations, test-time prediction, and
refinement of external predictions.

Chains operate on plain numpy arrays and build a fresh one-step autodiff
graph per iteration with frozen parameters; downstream losses treat chain
output as constant data.  Saliency chains run in unconstrained real space —
values are clamped to [0, 1] only at prediction/serialization boundaries.
Noise comes from counter-based per-sample streams, so a trajectory is a pure
function of (config, inputs).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nets
from . import tensor as T
from .rng import stream
from .tensor import Tensor

__all__ = [
    "ChainDivergedError", "LangevinConfig", "ChainTrace", "CoopSample",
    "RecoverResult", "PredictResult", "langevin_chain", "langevin_revise_y",
    "langevin_h_chain", "langevin_infer_h", "langevin_infer_h_masked",
    "cooperative_sample", "recover", "predict", "refine_external", "clamp01",
]


class ChainDivergedError(ArithmeticError):
    """A chain produced a non-finite energy or gradient."""

    def __init__(self, kind: str, step: int):
        self.kind = kind
        self.step = step
        super().__init__(f"{kind} chain diverged at step {step}")


@dataclass(frozen=True)
class LangevinConfig:
    """Step count, step size, and noise source of one chain.

    ``rng_stream`` is a stream-key path (see coopsal.rng); per-sample noise
    generators are derived from it by appending the sample index.  It is
    required whenever ``noise_enabled``.
    """

    steps: int
    step_size: float
    noise_enabled: bool = True
    rng_stream: tuple | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.noise_enabled and self.rng_stream is None:
            raise ValueError("noise-enabled chains need an rng_stream")


@dataclass
class ChainTrace:
    """Per-step, per-sample energy records: rows of (step, sample, energy).

    A traced chain of K steps records K+1 rows per sample; the last row is
    the energy of the final state.
    """

    rows: list[tuple[int, int, float]] = field(default_factory=list)

    def record(self, step: int, sample_index: int, energy: float) -> None:
        self.rows.append((step, sample_index, float(energy)))

    def energies(self, sample_index: int) -> list[float]:
        return [e for (_, i, e) in self.rows if i == sample_index]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "sample_index", "energy"])
            writer.writerows(self.rows)


def clamp01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def _per_sample_noise(gens, shape, dtype) -> np.ndarray:
    return np.stack([g.standard_normal(shape) for g in gens]).astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# saliency-space chains
# ---------------------------------------------------------------------------

def langevin_chain(energy_fn, y0: np.ndarray, cfg: LangevinConfig,
                   trace: ChainTrace | None = None, kind: str = "saliency",
                   observer=None) -> np.ndarray:
    """Iterate y <- y - (d²/2)·∂E/∂y + d·noise for cfg.steps steps.

    ``energy_fn`` maps a Tensor batch to a per-sample energy vector [n];
    samples must not interact, so the summed backward pass yields each
    sample's own gradient.  With noise disabled this is plain gradient
    descent on the energy.  ``observer(step, state)``, if given, is called
    after every update — stationary statistics need the trajectory, not
    just the final state.
    """
    y = np.array(y0, copy=True)
    n = y.shape[0]
    half_sq = 0.5 * cfg.step_size ** 2
    gens = None
    if cfg.noise_enabled and cfg.steps > 0:
        gens = [stream(*cfg.rng_stream, i) for i in range(n)]

    for step in range(cfg.steps):
        yt = Tensor(y, requires_grad=True)
        energy = energy_fn(yt)
        if energy.shape != (n,):
            raise T.ShapeError("langevin_chain", [energy.shape],
                               f"energy_fn must return per-sample energies [{n}]")
        if not np.all(np.isfinite(energy.data)):
            raise ChainDivergedError(kind, step)
        T.sum_all(energy).backward()
        grad = yt.grad
        if not np.all(np.isfinite(grad)):
            raise ChainDivergedError(kind, step)
        if trace is not None:
            for i in range(n):
                trace.record(step, i, energy.data[i])
        y = y - half_sq * grad
        if gens is not None:
            y = y + cfg.step_size * _per_sample_noise(gens, y.shape[1:], y.dtype)
        if observer is not None:
            observer(step, y)

    if trace is not None:
        energy = energy_fn(Tensor(y))
        for i in range(n):
            trace.record(cfg.steps, i, energy.data[i])
    return y


def langevin_revise_y(params_e, y0: np.ndarray, x: np.ndarray, cfg: LangevinConfig,
                      trace: ChainTrace | None = None) -> np.ndarray:
    """Revise saliency maps by Langevin steps on the energy network."""
    frozen = params_e.frozen()
    xt = Tensor(np.asarray(x))

    def energy_fn(yt):
        return nets.energy_forward(frozen, yt, xt)

    return langevin_chain(energy_fn, y0, cfg, trace=trace, kind="saliency")


# ---------------------------------------------------------------------------
# latent-space chains
# ---------------------------------------------------------------------------

def langevin_h_chain(gen_fn, y: np.ndarray, h0: np.ndarray, sigma: float,
                     cfg: LangevinConfig, mask: np.ndarray | None = None,
                     kind: str = "latent", observer=None) -> np.ndarray:
    """Sample the latent posterior given observations y.

    Iterates h <- h + (d²/2)·∇_h[−‖m∘(y − G(h))‖²/(2σ²) − ‖h‖²/2] + d·noise,
    i.e. noisy ascent on the log-joint of the Gaussian observation model and
    the standard-normal prior.  ``mask`` restricts the residual to visible
    entries; None means fully observed.  ``observer(step, state)`` is called
    after every update, as in langevin_chain.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    h = np.array(h0, copy=True)
    n = h.shape[0]
    half_sq = 0.5 * cfg.step_size ** 2
    yt = Tensor(np.asarray(y))
    mt = Tensor(np.asarray(mask)) if mask is not None else None
    gens = None
    if cfg.noise_enabled and cfg.steps > 0:
        gens = [stream(*cfg.rng_stream, i) for i in range(n)]

    for step in range(cfg.steps):
        ht = Tensor(h, requires_grad=True)
        residual = T.sub(yt, gen_fn(ht))
        if mt is not None:
            residual = T.mul(residual, mt)
        log_joint = T.add(
            T.mul_scalar(T.sum_all(T.square(residual)), -0.5 / sigma ** 2),
            T.mul_scalar(T.sum_all(T.square(ht)), -0.5),
        )
        log_joint.backward()
        grad = ht.grad
        if not np.all(np.isfinite(grad)):
            raise ChainDivergedError(kind, step)
        h = h + half_sq * grad
        if gens is not None:
            h = h + cfg.step_size * _per_sample_noise(gens, h.shape[1:], h.dtype)
        if observer is not None:
            observer(step, h)
    return h


def langevin_infer_h(params_g, y: np.ndarray, x: np.ndarray, h0: np.ndarray,
                     sigma: float, cfg: LangevinConfig) -> np.ndarray:
    """Posterior latent inference against fully observed saliency maps."""
    frozen = params_g.frozen()
    xt = Tensor(np.asarray(x))

    def gen_fn(ht):
        return nets.generator_forward(frozen, xt, ht)

    return langevin_h_chain(gen_fn, y, h0, sigma, cfg, mask=None)


def langevin_infer_h_masked(params_g, y_partial: np.ndarray, observed: np.ndarray,
                            x: np.ndarray, h0: np.ndarray, sigma: float,
                            cfg: LangevinConfig) -> np.ndarray:
    """Posterior latent inference from the visible part of an annotation.

    ``observed`` is a binary [n,1,H,W] mask; the residual is zeroed on
    hidden pixels before the backward pass.  With an all-ones mask the
    trajectory is identical to langevin_infer_h on the same stream.
    """
    observed = np.asarray(observed)
    if observed.shape != np.shape(y_partial):
        raise T.ShapeError("langevin_infer_h_masked",
                           [observed.shape, np.shape(y_partial)],
                           "mask and annotation must share a shape")
    if not np.all((observed == 0) | (observed == 1)):
        raise ValueError("observation mask must be binary")
    frozen = params_g.frozen()
    xt = Tensor(np.asarray(x))

    def gen_fn(ht):
        return nets.generator_forward(frozen, xt, ht)

    return langevin_h_chain(gen_fn, y_partial, h0, sigma, cfg, mask=observed)


# ---------------------------------------------------------------------------
# composite operations
# ---------------------------------------------------------------------------

@dataclass
class CoopSample:
    """An ancestral draw and its energy-revised refinement."""

    h: np.ndarray          # [n, d] prior draws
    y_coarse: np.ndarray   # [n, 1, H, W] generator output
    y_refined: np.ndarray  # [n, 1, H, W] after saliency-space Langevin


def _draw_latents(stream_path: tuple, n: int, d: int, dtype) -> np.ndarray:
    return np.stack([stream(*stream_path, i).standard_normal(d)
                     for i in range(n)]).astype(dtype, copy=False)


def _decode_latents(frozen_g, x: np.ndarray, latents: np.ndarray,
                    chunk_rows: int = 512) -> np.ndarray:
    """Decode an [m, n, d] latent block through the generator in row chunks."""
    m, n, d = latents.shape
    flat = latents.reshape(m * n, d)
    rows = []
    for start in range(0, m * n, chunk_rows):
        stop = min(start + chunk_rows, m * n)
        xs = x[np.arange(start, stop) % n]
        out = nets.generator_forward(frozen_g, Tensor(xs), Tensor(flat[start:stop]))
        rows.append(out.data)
    out = rows[0] if len(rows) == 1 else np.concatenate(rows)
    return out.reshape(m, n, *out.shape[1:])


def cooperative_sample(params_g, params_e, x: np.ndarray, cfg_y: LangevinConfig,
                       latent_stream: tuple) -> CoopSample:
    """Draw prior latents, decode them, then revise under the energy."""
    x = np.asarray(x)
    d = params_g.config.latent_dim
    dtype = params_g.tensors["head.weight"].data.dtype
    h = _draw_latents(latent_stream, x.shape[0], d, dtype)
    y_coarse = nets.generator_forward(params_g.frozen(), Tensor(x), Tensor(h)).data
    y_refined = langevin_revise_y(params_e, y_coarse, x, cfg_y)
    return CoopSample(h=h, y_coarse=y_coarse, y_refined=y_refined)


@dataclass
class RecoverResult:
    """Coarse-to-fine completion of a partial annotation."""

    h: np.ndarray          # [n, d] inferred latents
    y_coarse: np.ndarray   # [n, 1, H, W] generator completion
    y_refined: np.ndarray  # [n, 1, H, W] after saliency-space Langevin


def recover(params_g, params_e, y_partial: np.ndarray, observed: np.ndarray,
            x: np.ndarray, sigma: float, cfg_h: LangevinConfig,
            cfg_y: LangevinConfig, init_stream: tuple) -> RecoverResult:
    """Complete partial annotations: infer latents from visible pixels,
    decode, then push the decoded map toward a nearby low-energy state.

    The inference chain starts from a fresh prior draw keyed by
    ``init_stream`` (chains are not persisted across iterations).
    """
    x = np.asarray(x)
    d = params_g.config.latent_dim
    dtype = params_g.tensors["head.weight"].data.dtype
    h0 = _draw_latents(init_stream, x.shape[0], d, dtype)
    h = langevin_infer_h_masked(params_g, y_partial, observed, x, h0, sigma, cfg_h)
    y_coarse = nets.generator_forward(params_g.frozen(), Tensor(x), Tensor(h)).data
    y_refined = langevin_revise_y(params_e, y_coarse, x, cfg_y)
    return RecoverResult(h=h, y_coarse=y_coarse, y_refined=y_refined)


@dataclass
class PredictResult:
    """Test-time prediction plus the per-draw maps behind it.

    ``samples`` holds one map per latent draw ([m, n, 1, H, W]) for
    uncertainty estimation; ``latents`` the draws themselves ([m, n, d]).
    All maps are clamped to [0, 1] (prediction is a serialization boundary).
    """

    final: np.ndarray
    samples: np.ndarray
    latents: np.ndarray


PREDICT_MODES = ("latent-mean", "prediction-mean")


def predict(params_g, params_e, x: np.ndarray, m_latents: int, mode: str,
            cfg_y: LangevinConfig, latent_stream: tuple) -> PredictResult:
    """Predict saliency maps, with the diffusion term disabled.

    latent-mean averages m prior draws into one latent, decodes it, and
    refines by gradient descent on the energy; its per-draw samples are the
    ancestral decodings of the individual latents.  prediction-mean refines
    each draw separately and averages the refined maps.  ``params_e`` may be
    None (generator-only ablations): refinement is skipped.
    """
    if m_latents < 1:
        raise ValueError(f"m_latents must be >= 1, got {m_latents}")
    if mode not in PREDICT_MODES:
        raise ValueError(f"unknown predict mode {mode!r}; expected one of {PREDICT_MODES}")
    if cfg_y.noise_enabled:
        raise ValueError("predict requires a noise-free revision config")
    x = np.asarray(x)
    n = x.shape[0]
    d = params_g.config.latent_dim
    dtype = params_g.tensors["head.weight"].data.dtype
    frozen_g = params_g.frozen()
    xt = Tensor(x)

    per_sample = [stream(*latent_stream, i) for i in range(n)]
    latents = np.empty((m_latents, n, d), dtype=dtype)
    for j in range(m_latents):
        for i, g in enumerate(per_sample):
            latents[j, i] = g.standard_normal(d)

    def decode(h):
        return nets.generator_forward(frozen_g, xt, Tensor(h)).data

    if mode == "latent-mean":
        samples = _decode_latents(frozen_g, x, latents)
        y0 = decode(latents.mean(axis=0))
        final = y0 if params_e is None else langevin_revise_y(params_e, y0, x, cfg_y)
    else:
        revised = []
        for j in range(m_latents):
            y0 = decode(latents[j])
            revised.append(y0 if params_e is None
                           else langevin_revise_y(params_e, y0, x, cfg_y))
        samples = np.stack(revised)
        final = samples.mean(axis=0)

    return PredictResult(final=clamp01(final), samples=clamp01(samples),
                         latents=latents)


def refine_external(params_e, y_ext: np.ndarray, x: np.ndarray,
                    cfg: LangevinConfig, trace: ChainTrace | None = None) -> np.ndarray:
    """Refine predictions from an external model by noise-free descent.

    ``y_ext`` must lie in [0, 1]; the refined maps are clamped back to
    [0, 1] on return.
    """
    y_ext = np.asarray(y_ext)
    if y_ext.min() < 0.0 or y_ext.max() > 1.0:
        raise ValueError("external predictions must lie in [0, 1]")
    if cfg.noise_enabled:
        raise ValueError("refinement requires a noise-free config")
    refined = langevin_revise_y(params_e, y_ext, x, cfg, trace=trace)
    return clamp01(refined)
