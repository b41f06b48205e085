import numpy as np
import pytest

from faircl.autograd import Tensor


def finite_diff(fn, arrays, eps=1e-5):
    """Central differences of scalar ``fn(*tensors)`` w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            fp = fn(*[Tensor(x) for x in plus]).item()
            fm = fn(*[Tensor(x) for x in minus]).item()
            g[idx] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def autodiff(fn, arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    out.backward()
    return out, [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def check_grad(fn, arrays, tol=1e-4, eps=1e-5):
    _, ad = autodiff(fn, arrays)
    fd = finite_diff(fn, arrays, eps)
    for g_ad, g_fd in zip(ad, fd):
        assert rel_err(g_ad, g_fd) < tol, (g_ad, g_fd)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
