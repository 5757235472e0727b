import numpy as np
import pytest

from roughbsde import _kernels

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


def test_pvar_dp_backends_agree_bitwise(rng):
    for n in (2, 5, 40):
        powered = np.triu(rng.random((n, n)), 1) ** 1.7
        assert _kernels.pvar_dp_numpy(powered) == _kernels.pvar_dp_numba(powered)
        assert np.array_equal(_kernels.pvar_dp_from_right_numpy(powered), _kernels.pvar_dp_from_right_numba(powered))


@pytest.mark.parametrize("m", [2.0, 4.0, np.inf])
def test_pairwise_norm_backends_agree(rng, m):
    values = rng.standard_normal((50, 9, 3))
    a = _kernels.pairwise_lm_numpy(values, m)
    b = _kernels.pairwise_lm_numba(values, m)
    assert np.allclose(a, b, rtol=1e-13, atol=0)


@pytest.mark.parametrize("m", [2.0, 3.0, np.inf])
@pytest.mark.parametrize("batched", [False, True])
def test_pairwise_remainder_backends_agree(rng, batched, m):
    S, n, D, e = 30, 7, 2, 3
    values = rng.standard_normal((S, n, D))
    deriv = rng.standard_normal((S, n, D, e))
    path = rng.standard_normal((S if batched else 1, n, e))
    a = _kernels.pairwise_remainder_numpy(values, deriv, path, m)
    b = _kernels.pairwise_remainder_numba(values, deriv, path, m)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


def test_pairwise_remainder_of_linear_function_vanishes(rng):
    path = rng.standard_normal((1, 6, 2))
    A = rng.standard_normal((3, 2))
    values = np.einsum("de,sne->snd", A, np.broadcast_to(path, (4, 6, 2)))
    deriv = np.broadcast_to(A, (4, 6, 3, 2)).copy()
    for fn in (_kernels.pairwise_remainder_numpy, _kernels.pairwise_remainder_numba):
        assert np.max(fn(values, deriv, path, 2.0)) < 1e-13


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setattr(_kernels, "USE_NUMBA", False)
    assert _kernels.backend_name() == "numpy"
    monkeypatch.setattr(_kernels, "USE_NUMBA", True)
    assert _kernels.backend_name() == "numba"


def test_env_flag_is_read_at_import():
    import subprocess
    import sys

    code = "from roughbsde import _kernels; print(_kernels.backend_name())"
    env = {"ROUGHBSDE_DISABLE_NUMBA": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
