"""Central finite-difference gradient checks."""

from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> List[float]:
    """
    Compare autodiff gradients of the scalar ``fn()`` with central differences.

    Returns one norm-relative error per parameter,
    ``|analytic - numeric| / max(|analytic|, |numeric|)``, over the checked
    entries (all of them, or ``max_entries`` sampled with ``seed``).
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    errors = []
    for p, a in zip(params, analytic):
        flat = np.arange(p.data.size)
        if max_entries is not None and flat.size > max_entries:
            flat = np.sort(rng.choice(flat, size=max_entries, replace=False))
        numeric = np.empty(flat.size)
        for j, k in enumerate(flat):
            idx = np.unravel_index(k, p.data.shape)
            original = p.data[idx]
            with no_grad():
                p.data[idx] = original + step
                plus = fn().item()
                p.data[idx] = original - step
                minus = fn().item()
            p.data[idx] = original
            numeric[j] = (plus - minus) / (2.0 * step)
        checked = a.reshape(-1)[flat]
        scale = max(np.linalg.norm(checked), np.linalg.norm(numeric))
        errors.append(0.0 if scale == 0.0 else float(np.linalg.norm(checked - numeric) / scale))
    return errors
