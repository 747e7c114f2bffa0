import numpy as np
import pytest

from ticodec.tensor import Tensor


def numeric_grad(f, values: list, eps: float = 1e-5) -> list:
    """Central finite differences of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, v in enumerate(values):
        g = np.zeros_like(v, dtype=np.float64)
        flat = v.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(*values)
            flat[i] = orig - eps
            fm = f(*values)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def check_grad(make_loss, arrays: list, tol: float = 1e-5, eps: float = 1e-5):
    """Compare autodiff gradients of make_loss(*Tensors) against central FD.

    Error is |a - fd| / max(|a|, |fd|, 1), elementwise.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = make_loss(*tensors)
    loss.backward()

    def scalar(*vals):
        with_np = [Tensor(v) for v in vals]
        return make_loss(*with_np).item()

    fd = numeric_grad(scalar, [a.copy() for a in arrays], eps)
    worst = 0.0
    for t, g in zip(tensors, fd):
        a = t.grad if t.grad is not None else np.zeros_like(g)
        err = np.abs(a - g) / np.maximum.reduce([np.abs(a), np.abs(g), np.ones_like(g)])
        worst = max(worst, float(err.max()))
    assert worst < tol, f"max relative gradient error {worst:.3e} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.PCG64(1234))
