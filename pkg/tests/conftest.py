"""Shared fixtures and the finite-difference gradient oracle."""

import numpy as np
import pytest

from gmbinet import tensor as T
from gmbinet.tensor import OpTape, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def numeric_grad(fn, target, eps=1e-5, indices=None):
    """Central finite differences of the scalar ``fn()`` with respect to
    ``target.data``, probed at ``indices`` (all elements by default)."""
    flat = target.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(target.shape)


def analytic_grad(fn, inputs):
    """Reverse-mode gradients of the scalar ``fn()`` for each input."""
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with OpTape() as tape:
        loss = fn()
    T.backward(tape, loss)
    return [t.grad for t in inputs]


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(numeric), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradcheck(fn, inputs, eps=1e-5, max_probes=None, seed=0, tol=1e-4):
    """Compare reverse-mode against central differences for every input.

    Inputs must be float64 tensors.  ``max_probes`` limits the number of
    probed elements per tensor (chosen deterministically) so large
    parameter tensors stay cheap to check.  Returns the worst relative
    error seen.
    """
    grads = analytic_grad(fn, inputs)
    worst = 0.0
    probe_rng = np.random.default_rng(seed)
    for t, g in zip(inputs, grads):
        assert g is not None, f"no gradient reached tensor of shape {t.shape}"
        assert g.shape == t.shape
        size = t.data.size
        if max_probes is not None and size > max_probes:
            indices = probe_rng.choice(size, size=max_probes, replace=False)
        else:
            indices = range(size)
        num = numeric_grad(fn, t, eps=eps, indices=indices)
        idx = list(indices)
        err = max_rel_err(g.reshape(-1)[idx], num.reshape(-1)[idx])
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch {err:.3e} for input shape {t.shape}"
    return worst


def f64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)
