import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faircl import _pykernels, kernels
from oracles import ctc_brute_force, random_log_probs

ck = pytest.importorskip("faircl._ckernels")


def test_compiled_backend_is_default():
    if os.environ.get("FAIRCL_PURE_PYTHON", "") in ("", "0"):
        assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("flag, expected", [("1", "python"), ("0", "cython")])
def test_environment_selects_backend(flag, expected):
    env = {**os.environ, "FAIRCL_PURE_PYTHON": flag}
    out = subprocess.run([sys.executable, "-c", "from faircl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_ctc_backends_agree(rng):
    for _ in range(100):
        T, V = int(rng.integers(1, 12)), int(rng.integers(2, 6))
        L = int(rng.integers(1, 5))
        target = rng.integers(1, V, size=L).astype(np.int64)
        need = L + int(np.sum(target[1:] == target[:-1]))
        if need > T:
            continue
        lp = random_log_probs(rng, T, V)
        nll_c, g_c = ck.ctc_forward_backward(lp, target, 0)
        nll_p, g_p = _pykernels.ctc_forward_backward(lp, target, 0)
        assert abs(nll_c - nll_p) < 1e-10
        np.testing.assert_allclose(g_c, g_p, atol=1e-10)
        if T <= 5 and V <= 4:
            assert abs(nll_c - ctc_brute_force(lp, list(target))) < 1e-8


def test_ctc_nonzero_blank_index(rng):
    lp = random_log_probs(rng, 6, 4)
    target = np.array([0, 1], dtype=np.int64)
    a = ck.ctc_forward_backward(lp, target, 3)
    b = _pykernels.ctc_forward_backward(lp, target, 3)
    assert abs(a[0] - b[0]) < 1e-10


def test_ctc_impossible_target_raises():
    lp = np.log(np.full((2, 3), 1 / 3))
    for impl in (ck, _pykernels):
        with pytest.raises(ValueError):
            impl.ctc_forward_backward(lp, np.array([1, 1], dtype=np.int64), 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_edit_backends_agree(a, b):
    ra, rb = np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)
    assert tuple(ck.edit_ops(ra, rb)) == tuple(_pykernels.edit_ops(ra, rb))
