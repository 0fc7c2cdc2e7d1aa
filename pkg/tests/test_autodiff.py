import math

import numpy as np
import pytest

from dccl import autodiff as ad
from dccl.autodiff import Tape, Tensor

from conftest import max_rel_err, numerical_gradient


def grad_of(build, x):
    """Analytic gradient of scalar build(tensor) at x via the tape."""
    with Tape() as tape:
        t = tape.watch(Tensor(x))
        out = build(t)
    return tape.gradients(out)[t.node_id]


def check_against_fd(build, x, tol=1e-4):
    x = np.asarray(x, dtype=np.float64)
    analytic = grad_of(build, x)

    def value():
        return build(Tensor(x)).item()

    numeric = numerical_gradient(value, x)
    assert max_rel_err(analytic, numeric) <= tol


def test_matmul_value():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_l2_normalize_value():
    out = ad.l2_normalize(Tensor([3.0, 4.0]))
    assert np.allclose(out.data, [0.6, 0.8], atol=1e-15)


def test_softplus_value():
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_sum_of_square_gradient():
    g = grad_of(lambda t: (t * t).sum(), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g, [2.0, 4.0, 6.0])


def test_normalize_dot_gradient_matches_fd():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(8)
    v = rng.standard_normal(8)

    def build(t):
        return (ad.l2_normalize(t) * Tensor(v)).sum()

    analytic = grad_of(build, x)
    numeric = numerical_gradient(lambda: build(Tensor(x)).item(), x)
    assert max_rel_err(analytic, numeric) <= 1e-5


PRIMITIVES = {
    "add": lambda t, c: (t + Tensor(c)).sum(),
    "add_broadcast": lambda t, c: (t + Tensor(c[0])).sum(),
    "sub": lambda t, c: (Tensor(c) - t).sum(),
    "mul": lambda t, c: (t * Tensor(c)).sum(),
    "mul_self": lambda t, c: (t * t).sum(),
    "neg": lambda t, c: (-t).sum(),
    "matmul": lambda t, c: ad.matmul(t, Tensor(c.T)).sum(),
    "transpose": lambda t, c: (ad.transpose(t) * Tensor(c.T)).sum(),
    "exp": lambda t, c: ad.exp(t).sum(),
    "log": lambda t, c: ad.log(t * t + 1.0).sum(),
    "softplus": lambda t, c: ad.softplus(t).sum(),
    "relu": lambda t, c: ad.relu(t).sum(),
    "power": lambda t, c: ad.power(t * t + 0.5, -0.5).sum(),
    "sum_axis": lambda t, c: (t.sum(axis=0) * Tensor(c[0])).sum(),
    "mean": lambda t, c: t.mean(),
    "mean_axis": lambda t, c: (t.mean(axis=1) * Tensor(c[:, 0])).sum(),
    "l2_normalize": lambda t, c: (ad.l2_normalize(t) * Tensor(c)).sum(),
    "logsumexp": lambda t, c: ad.logsumexp(t).sum(),
    "logsumexp_masked": lambda t, c: ad.logsumexp(t, mask=c > 0).sum(),
    "logaddexp": lambda t, c: ad.logaddexp(t, Tensor(c)).sum(),
    "gather_pairs": lambda t, c: ad.gather_pairs(t, np.array([1, 0, 2])).sum(),
    "index_rows": lambda t, c: (ad.index_rows(t, np.array([0, 2, 1, 0])) * Tensor(1.0)).sum(),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_fd(name):
    build = PRIMITIVES[name]
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        x = rng.standard_normal((3, 4))
        c = rng.standard_normal((3, 4))
        if name == "relu":
            # keep inputs away from the kink so central differences are exact
            x = x + np.where(x >= 0, 0.05, -0.05)
        if name == "logsumexp_masked":
            c[:, 0] = 1.0  # every row keeps at least one entry
        check_against_fd(lambda t: build(t, c), x)


def test_composition_matches_fd():
    for trial in range(25):
        rng = np.random.default_rng(2000 + trial)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 3))

        def build(t):
            h = ad.relu(ad.matmul(t, Tensor(w)) + 0.3)
            z = ad.l2_normalize(h + 0.05)
            return ad.logsumexp(z * 3.0).mean()

        check_against_fd(build, x)


def test_backward_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 4))
    with Tape() as tape:
        t = tape.watch(Tensor(x))
        out = ad.logsumexp(ad.l2_normalize(t * t + 0.1)).mean()
    first = tape.gradients(out)[t.node_id]
    second = tape.gradients(out)[t.node_id]
    assert np.array_equal(first, second)


def test_detached_tensor_has_no_entry():
    with Tape() as tape:
        t = tape.watch(Tensor([1.0, 2.0]))
        const = Tensor([3.0, 4.0])
        out = (t * const).sum()
    grads = tape.gradients(out)
    assert const.node_id not in grads
    assert t.node_id in grads


def test_non_scalar_root_rejected():
    with Tape() as tape:
        t = tape.watch(Tensor([1.0, 2.0]))
        out = t * 2.0
    with pytest.raises(ad.ShapeError):
        tape.gradients(out)


def test_foreign_root_rejected():
    with Tape() as tape:
        tape.watch(Tensor([1.0]))
    with pytest.raises(ValueError):
        tape.gradients(Tensor(1.0))


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError) as err:
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(err.value)


def test_add_shape_mismatch_rejected():
    with pytest.raises(ad.ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))


def test_normalize_degenerate_rejected():
    with pytest.raises(ad.DegenerateInputError):
        ad.l2_normalize(Tensor([0.0, 0.0]))
    with pytest.raises(ad.DegenerateInputError):
        ad.l2_normalize(Tensor([[1.0, 0.0], [1e-13, 0.0]]))


def test_log_degenerate_rejected():
    with pytest.raises(ad.DegenerateInputError):
        ad.log(Tensor([1.0, 0.0]))


def test_gradient_accumulates_over_reuse():
    # d/dx of x*x + 3x at x=2 is 2*2 + 3 = 7
    with Tape() as tape:
        t = tape.watch(Tensor(2.0))
        out = t * t + t * 3.0
    assert tape.gradients(out)[t.node_id] == pytest.approx(7.0)


def test_empty_pool_rejected():
    with pytest.raises(ad.DegenerateInputError):
        ad.logsumexp(Tensor(np.ones((2, 2))), mask=np.zeros((2, 2), dtype=bool))
