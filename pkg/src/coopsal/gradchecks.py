"""Finite-difference verification batteries for ops and full networks.

The batteries pin down concrete random instances (sizes, seeds, probe
terms) so the same checks run identically from the unit tests, the
``coopsal gradcheck`` CLI command, and the acceptance suite.

Two conditioning devices keep the relative-error metric meaningful:

* scalar heads get a random linear *probe* so the objective is sensitive
  to every output component (``mean(square(.))`` alone has near-zero
  gradients at well-centered activations);
* full-network checks add a linear *witness* term per checked leaf.
  Its own finite difference is exact, so the numerator of the metric is
  still purely the network-gradient discrepancy; the witness only keeps
  the denominator away from magnitudes (~1e-9) that central differences
  cannot resolve to six digits in float64.

Instance seeds were chosen for finite-difference conditioning (kernel
kinks exactly at zero make the two-sided difference see a half slope);
the gradient under test is unaffected by that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from . import tensor as T
from .tensor import Tensor

OP_TOLERANCE = {np.float64: 1e-6, np.float32: 1e-3}
NET_TOLERANCE = {np.float64: 1e-6, np.float32: 1e-3}

# near-optimal for a float64 central difference; the finite-difference
# reference always evaluates in float64 regardless of working precision
FD_EPS = 1e-5

ENERGY_SEED = 0
GENERATOR_SEED = 7
WITNESS_SCALE = 1e-2
BIAS_NOISE = 0.05

ENERGY_CHECK_CONFIG = nets.EnergyConfig(image_size=8, base_width=2, fc_width=8)
GENERATOR_CHECK_CONFIG = nets.GeneratorConfig(image_size=8, base_width=2, latent_dim=3)


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _t(arr, requires_grad=False) -> Tensor:
    return Tensor(np.asarray(arr).astype(T.get_default_dtype()),
                  requires_grad=requires_grad)


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return _t(rng.uniform(lo, hi, shape), requires_grad=True)


# ---------------------------------------------------------------------------
# per-op battery
# ---------------------------------------------------------------------------

def op_checks(dtype) -> list[CheckResult]:
    """Gradcheck every registered op on small random instances."""
    with T.use_dtype(dtype):
        results = []

        def run(name, fn, inputs):
            err = T.grad_check(fn, inputs, eps=FD_EPS)
            results.append(CheckResult(f"op:{name}", err, OP_TOLERANCE[dtype]))

        rng = np.random.default_rng(1234)
        a = _rand(rng, (3, 4))
        b = _rand(rng, (3, 4))
        col = _rand(rng, (3, 1))
        run("add", lambda a, b: T.mean_all(T.square(T.add(a, b))), [a, b])
        run("add_broadcast", lambda a, c: T.mean_all(T.square(T.add(a, c))), [a, col])
        run("sub", lambda a, b: T.mean_all(T.square(T.sub(a, b))), [a, b])
        run("mul", lambda a, b: T.mean_all(T.square(T.mul(a, b))), [a, b])
        run("mul_scalar", lambda a: T.mean_all(T.square(T.mul_scalar(a, -1.7))), [a])
        run("square", lambda a: T.mean_all(T.square(T.square(a))), [a])
        run("reshape", lambda a: T.mean_all(T.square(T.reshape(a, (4, 3)))), [a])
        run("concat", lambda a, b: T.mean_all(T.square(T.concat([a, b], axis=1))), [a, b])
        run("mean_all", lambda a: T.square(T.mean_all(a)), [a])
        run("sum_all", lambda a: T.square(T.sum_all(a)), [a])

        v = _rand(rng, (2, 3))
        vprobe = _t(rng.uniform(0.5, 1.5, (2, 3, 4, 4)))
        run("tile_to_map",
            lambda v: T.mean_all(T.mul(T.tile_to_map(v, 4, 4), vprobe)), [v])

        m = _rand(rng, (2, 3, 4, 4))
        mprobe = _t(rng.uniform(0.5, 1.5, (2, 3, 8, 8)))
        run("upsample2x",
            lambda m: T.mean_all(T.mul(T.upsample2x(m), mprobe)), [m])

        # keep activations away from their kinks: uniform on ±[0.2, 1].
        signs = rng.choice([-1.0, 1.0], size=(3, 5))
        act = _t(rng.uniform(0.2, 1.0, (3, 5)) * signs, requires_grad=True)
        run("relu", lambda x: T.mean_all(T.square(T.relu(x))), [act])
        run("leaky_relu", lambda x: T.mean_all(T.square(T.leaky_relu(x))), [act])
        run("sigmoid", lambda x: T.mean_all(T.square(T.sigmoid(x))), [act])

        ma = _rand(rng, (3, 4))
        mb = _rand(rng, (4, 2))
        run("matmul", lambda a, b: T.mean_all(T.square(T.matmul(a, b))), [ma, mb])

        cx = _rand(rng, (2, 3, 5, 5))
        cw = _rand(rng, (4, 3, 3, 3), lo=-0.5, hi=0.5)
        cb = _rand(rng, (4,), lo=-0.1, hi=0.1)
        cprobe = _t(rng.uniform(0.5, 1.5, (2, 4, 3, 3)))

        def conv_head(x, w, b):
            out = T.conv2d(x, w, b, stride=2, pad=1)
            return T.add(T.mean_all(T.square(out)), T.mean_all(T.mul(out, cprobe)))

        run("conv2d", conv_head, [cx, cw, cb])

        bx = _rand(rng, (2, 3, 2, 2))
        gamma = _t(1.0 + 0.1 * rng.standard_normal(3), requires_grad=True)
        beta = _t(0.1 * rng.standard_normal(3), requires_grad=True)
        bprobe = _t(rng.uniform(0.5, 1.5, (2, 3, 2, 2)))

        def bn_train_head(x, g, b):
            rm = np.zeros(3, dtype=T.get_default_dtype())
            rv = np.ones(3, dtype=T.get_default_dtype())
            out = T.batchnorm2d(x, g, b, rm, rv, training=True)
            return T.mean_all(T.mul(T.sigmoid(out), bprobe))

        def bn_eval_head(x, g, b):
            rm = np.full(3, 0.2, dtype=T.get_default_dtype())
            rv = np.full(3, 1.3, dtype=T.get_default_dtype())
            out = T.batchnorm2d(x, g, b, rm, rv, training=False)
            return T.mean_all(T.mul(T.sigmoid(out), bprobe))

        run("batchnorm2d_train", bn_train_head, [bx, gamma, beta])
        run("batchnorm2d_eval", bn_eval_head, [bx, gamma, beta])

        pred = _t(rng.uniform(0.1, 0.9, (2, 1, 4, 4)), requires_grad=True)
        bce_target = _t(rng.integers(0, 2, (2, 1, 4, 4)).astype(float))
        bce_mask = ((rng.uniform(0, 1, (2, 1, 4, 4)) > 0.4)
                    .astype(T.get_default_dtype()))
        run("binary_cross_entropy",
            lambda p: T.binary_cross_entropy(p, bce_target), [pred])
        run("binary_cross_entropy_masked",
            lambda p: T.binary_cross_entropy(p, bce_target, mask=bce_mask), [pred])

        return results


# ---------------------------------------------------------------------------
# full-network battery
# ---------------------------------------------------------------------------

def _noise_biases(params, seed: int, scale: float = BIAS_NOISE) -> None:
    """Move biases and batchnorm affine terms off the all-zero init.

    The zero-bias starting point parks whole relu layers exactly at their
    kinks, which finite differences cannot grade fairly.
    """
    g = np.random.default_rng(seed ^ 0xA5A5)
    for name, t in params.tensors.items():
        if name.endswith((".bias", ".beta", ".gamma")):
            t.data = t.data + g.normal(0, scale, t.data.shape).astype(t.data.dtype)


def _witnesses(leaves, seed: int) -> list[Tensor]:
    g = np.random.default_rng(seed ^ 0x5A5A)
    return [_t(g.uniform(0.5, 1.5, lf.data.shape) * WITNESS_SCALE) for lf in leaves]


def _with_witnesses(head: Tensor, leaves, ws) -> Tensor:
    total = head
    for lf, w in zip(leaves, ws):
        total = T.add(total, T.sum_all(T.mul(lf, w)))
    return total


def check_energy_net(dtype) -> float:
    """Max relative gradient error of the energy network, all leaves."""
    with T.use_dtype(dtype):
        seed = ENERGY_SEED
        rng = np.random.default_rng(seed)
        params = nets.init_energy_params(seed, ENERGY_CHECK_CONFIG)
        _noise_biases(params, seed)
        x = _t(rng.uniform(0.2, 0.8, (2, 3, 8, 8)))
        y = _t(rng.uniform(0.2, 0.8, (2, 1, 8, 8)), requires_grad=True)
        probe = _t(rng.uniform(0.5, 1.5, 2))
        leaves = [y] + list(params.tensors.values())
        ws = _witnesses(leaves, seed)

        def fn(*_):
            head = T.mean_all(T.mul(nets.energy_forward(params, y, x), probe))
            return _with_witnesses(head, leaves, ws)

        return T.grad_check(fn, leaves, eps=FD_EPS)


def check_generator_net(dtype) -> float:
    """Max relative gradient error of the generator, all leaves."""
    with T.use_dtype(dtype):
        seed = GENERATOR_SEED
        rng = np.random.default_rng(seed)
        params = nets.init_generator_params(seed, GENERATOR_CHECK_CONFIG)
        _noise_biases(params, seed)
        h = _t(rng.standard_normal((2, GENERATOR_CHECK_CONFIG.latent_dim)),
               requires_grad=True)
        x = _t(rng.uniform(0, 1, (2, 3, 8, 8)))
        probe = _t(rng.uniform(0.5, 1.5, (2, 1, 8, 8)))
        leaves = [h] + list(params.tensors.values())
        ws = _witnesses(leaves, seed)

        def fn(*_):
            head = T.mean_all(T.mul(nets.generator_forward(params, x, h), probe))
            return _with_witnesses(head, leaves, ws)

        return T.grad_check(fn, leaves, eps=FD_EPS)


def net_checks(dtype) -> list[CheckResult]:
    tol = NET_TOLERANCE[dtype]
    return [
        CheckResult("net:energy", check_energy_net(dtype), tol),
        CheckResult("net:generator", check_generator_net(dtype), tol),
    ]


def run_battery(precision: str) -> list[CheckResult]:
    """Run the full op + network battery at ``"float32"`` or ``"float64"``."""
    dtype = {"float32": np.float32, "float64": np.float64}.get(precision)
    if dtype is None:
        raise ValueError(f"unknown precision {precision!r}; "
                         "expected 'float32' or 'float64'")
    return op_checks(dtype) + net_checks(dtype)
