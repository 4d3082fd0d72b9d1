import numpy as np
import pytest

from asag.tensor import Tensor, grad_of


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_grads(build, arrays, rtol=1e-4, h=1e-5):
    """Compare taped gradients of ``build(*tensors)`` against finite differences."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    analytic = grad_of(out, tensors)
    for k, a in enumerate(arrays):
        def f(v, k=k):
            args = [Tensor(v if j == k else arrays[j]) for j in range(len(arrays))]
            return float(build(*args).data)
        numeric = numeric_grad(f, a.copy(), h)
        scale = max(np.abs(numeric).max(), np.abs(analytic[k]).max(), 1e-8)
        err = np.abs(numeric - analytic[k]).max() / scale
        assert err < rtol, f"input {k}: relative error {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def trained_default(tmp_path_factory):
    """The default gauss8 checkpoint, trained once per session.

    Returns ``(config, params, training_seconds)``.
    """
    import time

    from asag.checkpoint import load_checkpoint
    from asag.cli import RunConfig, cmd_train

    cfg = RunConfig(out=str(tmp_path_factory.mktemp("default_run")))
    start = time.perf_counter()
    ckpt = cmd_train(cfg)
    elapsed = time.perf_counter() - start
    params, _ = load_checkpoint(ckpt, cfg.model_config())
    return cfg, params, elapsed
