import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from echokws import _kernels_py, kernels

try:
    from echokws import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def random_problem(seed, T=60, C=12, P=7):
    r = np.random.default_rng(seed)
    z = r.standard_normal((2, T, C)) * r.uniform(0.5, 4)
    p = np.exp(z) / np.exp(z).sum(-1, keepdims=True)
    from echokws.fusion import indicator_matrix
    ind = indicator_matrix(p[0], p[1])
    cat_v, cat_e = r.integers(0, 3, T), r.integers(0, 3, T)
    labels = r.integers(0, C, T)
    params = np.hstack([r.uniform(0, 2, (P, 4)), r.uniform(-5, 5, (P, 4)), r.uniform(0, 1.5, (P, 4))])
    return np.log(p[0]), np.log(p[1]), ind, cat_v, cat_e, labels, params


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
@given(st.integers(0, 2**32 - 1))
def test_fused_accuracy_backends_agree(seed):
    args = random_problem(seed)
    a = kernels.fused_accuracy(*args, silence_id=11, impl=compiled)
    b = kernels.fused_accuracy(*args, silence_id=11, impl=_kernels_py)
    assert np.array_equal(a, b)


@needs_ext
@given(st.lists(st.integers(0, 4), max_size=10), st.lists(st.integers(0, 4), max_size=10))
def test_edit_counts_backends_agree(ref, hyp):
    assert kernels.edit_counts(ref, hyp, compiled) == kernels.edit_counts(ref, hyp, _kernels_py)


def test_fused_accuracy_bounds():
    acc = kernels.fused_accuracy(*random_problem(0), silence_id=11)
    assert acc.shape == (7,) and np.all((acc >= 0) & (acc <= 1))
