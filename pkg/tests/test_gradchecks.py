"""The shared finite-difference battery: every op instance and both nets."""

import numpy as np
import pytest

from coopsal import gradchecks


def test_op_battery_float64_all_pass():
    results = gradchecks.op_checks(np.float64)
    failing = [r for r in results if not r.passed]
    assert not failing, f"failing op checks: {[(r.name, r.error) for r in failing]}"


def test_op_battery_covers_every_op():
    names = {r.name.removeprefix("op:") for r in gradchecks.op_checks(np.float64)}
    expected = {
        "add", "add_broadcast", "sub", "mul", "mul_scalar", "square", "reshape",
        "concat", "mean_all", "sum_all", "tile_to_map", "upsample2x", "relu",
        "leaky_relu", "sigmoid", "matmul", "conv2d", "batchnorm2d_train",
        "batchnorm2d_eval", "binary_cross_entropy", "binary_cross_entropy_masked",
    }
    assert names == expected


def test_net_battery_float32():
    results = gradchecks.net_checks(np.float32)
    failing = [r for r in results if not r.passed]
    assert not failing, f"failing net checks: {[(r.name, r.error) for r in failing]}"


def test_run_battery_rejects_unknown_precision():
    with pytest.raises(ValueError, match="precision"):
        gradchecks.run_battery("float16")
