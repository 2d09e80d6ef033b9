"""Central finite-difference oracle."""
import numpy as np

from ..errors import UsageError
from .core import Tensor, grad


def finite_diff_check(fn, point, eps=1e-6):
    """Max over coordinates of |analytic - numeric| / (|analytic| + 1e-8).

    ``fn`` maps a Tensor to a scalar Tensor. The check runs in the dtype of
    ``point``; use float64 for meaningful tolerances.
    """
    if not eps > 0:
        raise UsageError(f"finite_diff_check needs eps > 0, got {eps}")
    if isinstance(point, Tensor):
        base = np.array(point.data, copy=True)
    else:
        base = np.array(point, dtype=np.float64, copy=True)
    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    if out.size != 1:
        raise UsageError(f"fn must return a scalar, got shape {out.shape}")
    analytic = grad(out, x).data.reshape(-1).astype(np.float64)

    flat = base.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        hi, lo = orig + eps, orig - eps
        flat[i] = hi
        fp = float(fn(Tensor(base.copy())).data)
        flat[i] = lo
        fm = float(fn(Tensor(base.copy())).data)
        flat[i] = orig
        # divide by the step actually taken after rounding
        numeric[i] = (fp - fm) / (hi - lo)
    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))
