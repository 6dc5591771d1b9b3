import numpy as np
import pytest

from hetcl import autodiff as ad
from hetcl.autodiff import NumericError, ParamSet, Tensor
from hetcl.meta import MetaConfig, inner_update, select_meta_examples
from hetcl.replay import coverage_maximization


def test_scalar_closed_form():
    p = ParamSet({"theta": np.array([[1.0]])})
    fast = inner_update(p, lambda q: ad.reduce_sum(q["theta"] * q["theta"]), 0.1)
    assert fast["theta"][0, 0] == pytest.approx(0.8)
    assert p["theta"][0, 0] == 1.0


def test_zero_gradient_and_zero_alpha():
    p = ParamSet({"a": np.arange(4.0).reshape(2, 2)})
    const = lambda q: Tensor(2.0) + ad.scale(ad.reduce_sum(q["a"]), 0.0)
    assert inner_update(p, const, 0.5).equals(p)
    assert inner_update(p, lambda q: ad.reduce_sum(ad.exp(q["a"])), 0.0).equals(p)


def test_descent_for_small_step():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
    loss = lambda q: ad.reduce_mean((ad.matmul(x, q["w"]) - y) * (ad.matmul(x, q["w"]) - y))
    p = ParamSet({"w": rng.normal(size=(3, 1))})
    fast = inner_update(p, loss, 1e-3)
    assert loss(fast.as_tensors(False)).item() < loss(p.as_tensors(False)).item()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_gradient_raises():
    p = ParamSet({"a": np.array([[1e200]])})
    with pytest.raises(NumericError):
        inner_update(p, lambda q: ad.reduce_sum(q["a"] * q["a"]), 0.1)


def test_delegation_and_supply():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(23, 2)), np.array([0] * 20 + [1] * 3)
    ids = np.arange(100, 123)
    got = select_meta_examples(ids, x, y, 10, d_thresh=1.0)
    assert got.tolist() == coverage_maximization(x, y, 1.0, 10, ids=ids).tolist()
    assert len(got) == 13 and set(got[-3:]) == {120, 121, 122}


def test_config_validation():
    with pytest.raises(ValueError):
        MetaConfig(alpha=-1.0)
    with pytest.raises(ValueError):
        MetaConfig(shots=0)
