"""Central finite-difference gradient checks."""
import numpy as np


def grad_check(fn, wrt, step=1e-3, floor=1e-6):
    """Max relative error between backprop and central differences.

    ``fn()`` builds a scalar Tensor from the tensors in ``wrt`` (name ->
    Tensor); the check perturbs ``wrt[name].data`` in place. Run it on
    float64 tensors: in float32 the truncation noise of a 1e-3 step swamps
    small gradient entries.
    """
    for t in wrt.values():
        t.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for name, t in wrt.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if not np.isfinite(analytic).all():
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().data)
            flat[i] = orig - step
            fm = float(fn().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = float((np.abs(analytic - numeric) / denom).max()) if flat.size else 0.0
        worst = max(worst, err)
    return worst
