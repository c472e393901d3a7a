"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from celltransit.errors import ConfigError
from celltransit.nn.tensor import Tape, no_tape


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tolerance: float
    worst: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"gradient check: {status} (max rel err {self.max_rel_err:.3e}"
                f" over {self.n_checked} coords, tol {self.tolerance:.1e})")


def gradient_check(loss_fn, tensors, tolerance: float = 1e-4,
                   n_samples: int = 40, step: float = 1e-5,
                   seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current values of
    ``tensors`` each call.  A seeded sample of coordinates is perturbed by
    +-step; relative error uses max(|analytic| + |numeric|, 1e-6) as the
    denominator.  64-bit values are required for the stated tolerances to
    be meaningful.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ConfigError("gradient_check requires float64 tensors")

    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    for t in tensors:
        t.zero_grad()

    rng = np.random.default_rng(seed)
    sizes = np.array([t.data.size for t in tensors])
    total = int(sizes.sum())
    n = min(n_samples, total)
    flat_choice = rng.choice(total, size=n, replace=False)

    max_rel = 0.0
    worst = None
    bounds = np.cumsum(sizes)
    for flat in flat_choice:
        ti = int(np.searchsorted(bounds, flat, side="right"))
        local = int(flat - (bounds[ti - 1] if ti else 0))
        t = tensors[ti]
        orig = t.data.flat[local]
        t.data.flat[local] = orig + step
        with no_tape():
            lp = float(loss_fn().data)
        t.data.flat[local] = orig - step
        with no_tape():
            lm = float(loss_fn().data)
        t.data.flat[local] = orig
        numeric = (lp - lm) / (2 * step)
        a = float(analytic[ti].flat[local])
        rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
        if rel > max_rel:
            max_rel = rel
            worst = (ti, local, a, numeric)
    return GradCheckReport(max_rel_err=max_rel, n_checked=n,
                           tolerance=tolerance, worst=worst)
