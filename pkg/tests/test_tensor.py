"""Autodiff engine basics: graph wiring, accumulation, dtype discipline."""

import numpy as np
import pytest

from voice2face.errors import ShapeError
from voice2face.tensor import Tensor


def test_add_mul_gradients():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    out = ((a + b) * b).sum()
    out.backward()
    assert np.allclose(a.grad, [3.0, 4.0])
    assert np.allclose(b.grad, [1.0 + 2 * 3.0, 2.0 + 2 * 4.0])


def test_gradient_accumulates_over_shared_node():
    a = Tensor(np.array([2.0]), requires_grad=True)
    out = (a * 3.0 + a * 5.0).sum()
    out.backward()
    assert np.allclose(a.grad, [8.0])


def test_diamond_graph_topological_order():
    a = Tensor(np.array([1.5]), requires_grad=True)
    b = a * 2.0
    c = a * -1.0
    out = (b + c).sum()
    out.backward()
    assert np.allclose(a.grad, [1.0])


def test_mean_and_reshape_backward():
    a = Tensor(np.arange(6, dtype=np.float64), requires_grad=True)
    out = a.reshape(2, 3).mean()
    out.backward()
    assert np.allclose(a.grad, np.full(6, 1.0 / 6.0))


def test_detach_blocks_gradient_flow():
    a = Tensor(np.array([1.0]), requires_grad=True)
    out = (a * 2.0).detach() * 3.0
    assert not out.requires_grad
    assert out._backward is None


def test_no_graph_without_requires_grad():
    a = Tensor(np.array([1.0]))
    b = Tensor(np.array([2.0]))
    out = a + b
    assert out._parents == () and out._backward is None


def test_backward_requires_scalar():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(ShapeError):
        (a * 2.0).backward()


def test_shape_mismatch_raises():
    a = Tensor(np.zeros(3))
    b = Tensor(np.zeros(4))
    with pytest.raises(ShapeError):
        a + b


def test_scalar_results_preserve_float64():
    a = Tensor(np.array([1.0], dtype=np.float64), requires_grad=True)
    b = Tensor(np.array([2.0], dtype=np.float64), requires_grad=True)
    out = a.sum() + b.sum()
    assert out.data.dtype == np.float64


def test_float32_default_for_python_data():
    t = Tensor([1.0, 2.0])
    assert t.data.dtype == np.float32


def test_grad_dtype_matches_data():
    for dtype in (np.float32, np.float64):
        a = Tensor(np.ones(3, dtype=dtype), requires_grad=True)
        (a * 2.0).sum().backward()
        assert a.grad.dtype == dtype
