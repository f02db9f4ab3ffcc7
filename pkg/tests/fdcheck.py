"""Finite-difference gradient oracle used across the test suite.

Central differences with step 1e-5.  Independent of the tape: callers hand a
closure that rebuilds the forward pass from mutated numpy buffers.
"""

import numpy as np

EPS = 1e-5
TOL = 1e-4


def fd_grad(f, arr, coords, eps=EPS):
    """d f / d arr[c] for each c in coords, by central differences."""
    out = np.zeros(len(coords))
    for i, c in enumerate(coords):
        orig = arr[c]
        arr[c] = orig + eps
        fp = f()
        arr[c] = orig - eps
        fm = f()
        arr[c] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out


def sample_coords(rng, shape, n):
    total = int(np.prod(shape)) if shape else 1
    take = min(n, total)
    flat = rng.choice(total, size=take, replace=False)
    if not shape:
        return [()]
    return [tuple(np.unravel_index(i, shape)) for i in flat]


def rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=float).ravel()
    b = np.asarray(numeric, dtype=float).ravel()
    denom = max(float(np.abs(b).max()) if b.size else 0.0, 1e-8)
    return float(np.abs(a - b).max() / denom)


def check_grads(build_loss, params, rng, coords_per_tensor=12, tol=TOL):
    """Assert tape gradients match finite differences for every named tensor.

    build_loss() runs a fresh forward over the live parameter buffers and
    returns (tape, loss_tensor).  Returns the worst relative error seen.
    """
    t, loss = build_loss()
    t.backward(loss)
    worst = 0.0
    for name, p in params.items():
        coords = sample_coords(rng, p.data.shape, coords_per_tensor)
        num = fd_grad(lambda: build_loss()[1].item(), p.data, coords)
        ana = (np.zeros(len(coords)) if p.grad is None
               else np.array([p.grad[c] for c in coords]))
        err = rel_err(ana, num)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"
        worst = max(worst, err)
    return worst
