import os
import subprocess
import sys

import numpy as np
import pytest

import ltsf
from ltsf._backend import available_backends
from ltsf.numkit import stream_states

BACKENDS = available_backends()
needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def _calls(n=6, frames=300):
    rng = np.random.default_rng(0)
    hist = 1.19 + 0.02 * rng.random((n, 250))
    lor = np.array([0.0, -0.01, 9.0]) + 1e-3 * rng.standard_normal((n, 3))
    lv = np.column_stack([rng.uniform(50, 150, n), rng.uniform(10, 30, n)])
    return {
        "uniform_fill": lambda k: k.uniform_fill(stream_states(1, range(n)), 17, -2.0, 3.0),
        "normal_fill": lambda k: k.normal_fill(stream_states(1, range(n)), 17),
        "mackey_glass": lambda k: k.mackey_glass(hist, frames, 0.1, 0.2, 0.1),
        "lorenz": lambda k: k.lorenz(lor, frames, 0.01, 10.0, 28.0, 8.0 / 3.0),
        "lotka_volterra": lambda k: k.lotka_volterra(lv, stream_states(1, range(n)), frames, 0.01, 1.0, 0.1, 0.02, 0.5, 0.002),
    }


@needs_ext
@pytest.mark.parametrize("name", sorted(_calls()))
def test_backends_bit_identical(name):
    call = _calls()[name]
    a = call(BACKENDS["python"])
    b = call(BACKENDS["cython"])
    a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_fill_advances_state_in_place(backend):
    k = BACKENDS[backend]
    s = stream_states(0, range(3))
    first = k.uniform_fill(s, 4, 0.0, 1.0)
    second = k.uniform_fill(s, 4, 0.0, 1.0)
    assert not np.array_equal(first, second)


def test_pure_python_switch():
    env = dict(os.environ, LTSF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import ltsf; print(ltsf.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert ltsf.KERNEL_BACKEND in BACKENDS
