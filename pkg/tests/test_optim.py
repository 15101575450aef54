import numpy as np
import pytest

from byb.optim import Adam
from byb.tensor import NumericError, Tensor


def reference_adamw(x, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, start=1):
        x = x * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
    return x


def test_matches_reference_over_100_steps():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 3))
    grads = [rng.normal(size=(4, 3)) for _ in range(100)]
    p = Tensor(x0.copy(), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-2, weight_decay=1e-3)
    for g in grads:
        opt.step({p: g})
    np.testing.assert_allclose(p.data, reference_adamw(x0, grads, 1e-2, 1e-3), rtol=0, atol=1e-10)


def test_zero_gradient_without_decay_is_a_no_op():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1, weight_decay=0.0)
    opt.step({p: np.zeros(2)})
    assert np.array_equal(p.data, [1.0, -2.0])


def test_first_step_moves_by_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    Adam({"p": p}, lr=1e-3, weight_decay=0.0).step({p: np.array([-7.0])})
    assert p.data[0] == pytest.approx(1e-3, rel=1e-6)


def test_refuses_frozen_tensors():
    with pytest.raises(ValueError, match="teacher.w1"):
        Adam({"teacher.w1": Tensor(np.ones(2))})


def test_nonfinite_gradient_names_tensor():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"seqmodel.layer0.wq": p})
    with pytest.raises(NumericError, match="seqmodel.layer0.wq"):
        opt.step({p: np.array([np.nan, 0.0])})
    assert np.array_equal(p.data, np.ones(2))


def test_missing_gradient():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        Adam({"p": p}).step({})
