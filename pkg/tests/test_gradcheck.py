"""The finite-difference checker itself, plus the full gradient suite."""

import numpy as np
import pytest

from voice2face.gradcheck import finite_difference_check, run_gradient_suite
from voice2face.tensor import Tensor

TOLERANCE = 1e-4


def test_quadratic_matches_analytic():
    # f(x) = sum(x^2): analytic gradient [2, 4] at x = [1, 2].
    x = Tensor(np.array([1.0, 2.0]))
    err = finite_difference_check(lambda t: (t * t).sum(), x, h=1e-5)
    assert err < 1e-8

    probe = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (probe * probe).sum().backward()
    assert np.allclose(probe.grad, [2.0, 4.0])


def test_linear_function_error_is_rounding_level():
    w = np.array([3.0, -1.0, 0.5])
    x = Tensor(np.array([0.2, 0.4, -0.6]))
    err = finite_difference_check(lambda t: (t * Tensor(w)).sum(), x, h=1e-4)
    assert err < 1e-9


_SUITE_CACHE = []


def _suite():
    if not _SUITE_CACHE:
        _SUITE_CACHE.extend(run_gradient_suite())
    return _SUITE_CACHE


def test_full_suite_passes_tolerance():
    results = _suite()
    names = [n for n, _ in results]
    # every layer kind and all three step objectives are represented
    for required in ("conv1d/input", "conv2d/input", "deconv2d/input",
                     "batchnorm_train/input", "relu", "leaky_relu", "sigmoid",
                     "softmax", "time_avg_pool", "fully_connected/input",
                     "binary_cross_entropy", "categorical_cross_entropy",
                     "objective_discriminator", "objective_classifier",
                     "objective_generator"):
        assert required in names
    for name, err in results:
        assert err < TOLERANCE, f"{name}: {err}"


def test_discriminator_loss_wrt_input_is_included():
    results = dict(_suite())
    assert results["discriminator_loss/input"] < TOLERANCE
