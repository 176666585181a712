import numpy as np
import pytest

from tracedup.corpus import synth_corpus
from tracedup.preprocess import PreprocessConfig

JAVA_NPE = (
    'Exception in thread "main" java.lang.NullPointerException\n'
    "    at com.example.MyClass.myMethod(MyClass.java:10)\n"
    "    at com.example.MyClass.main(MyClass.java:5)\n"
)

GDB_CRASH = (
    "#0  0x40990b in crash_func() at example.c:6\n"
    "#1  0x40250a in inter_function() at example.c:10\n"
    "#2  0x40150a in main() at example.c:15\n"
)


@pytest.fixture(scope="session")
def small_corpus():
    """30 buckets x 3 reports, deterministic, cheap enough for unit tests."""
    return synth_corpus(30, 3, frame_vocab=20, mutation_rate=0.2, seed=11,
                        day_span=30)


@pytest.fixture
def pre_config():
    return PreprocessConfig()


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative deviation; the floor keeps exact-zero gradients from
    amplifying finite-difference noise into spurious failures."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
    return float(np.linalg.norm(analytic - numeric) / denom)


def central_diff(fn, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar fn w.r.t. every entry of array."""
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        plus = fn()
        array[idx] = orig - eps
        minus = fn()
        array[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * eps)
        it.iternext()
    return grad
