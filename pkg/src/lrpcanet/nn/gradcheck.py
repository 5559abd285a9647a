"""Central finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np


ROUNDOFF_FACTOR = 100.0


class GradCheckError(FloatingPointError):
    pass


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    def passed(self, tolerance=None):
        return self.max_rel_error < (self.tolerance if tolerance is None else tolerance)


def _as_tuple(out):
    return out if isinstance(out, tuple) else (out,)


def _projected_loss(outputs, projections):
    total = 0.0
    for o, r in zip(outputs, projections):
        if not np.all(np.isfinite(o)):
            raise GradCheckError("non-finite network output while probing")
        total += float(np.sum(o * r))
    return total


def rel_error(a, b, floor=1e-7):
    """``|a - b| / max(|a|, |b|, floor)`` with ``|.|`` the Euclidean norm, so
    arrays are compared as vectors (single near-zero entries do not dominate)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def grad_check(network, x, tolerance=1e-4, h=1e-5, samples=6, seed=0, floor=1e-5,
               check_input=True):
    """Compare ``network.backward`` against central differences.

    The scalar probed is ``sum(out * R)`` for a fixed Gaussian ``R`` per output.
    Up to ``samples`` entries of every parameter (and of ``x``) are perturbed;
    each tensor's error is :func:`rel_error` over its sampled entries.  The
    denominator floor is the larger of ``floor`` and the finite-difference
    round-off budget scaled by ``1 / tolerance``, so a gradient that is zero
    up to round-off passes while any real mismatch does not.  ``tolerance`` becomes the default for ``result.passed()``.
    """
    params = list(network.named_parameters())
    if x.dtype != np.float64 or any(p.value.dtype != np.float64 for _, p in params):
        raise TypeError("grad_check requires float64 inputs and parameters")
    rng = np.random.default_rng(seed)
    x = x.copy()

    outputs = _as_tuple(network.forward(x))
    projections = tuple(rng.standard_normal(o.shape) for o in outputs)
    network.zero_grad()
    grads_in = network.backward(projections if len(projections) > 1 else projections[0])
    analytic = {name: p.grad.copy() for name, p in params}

    def loss():
        return _projected_loss(_as_tuple(network.forward(x)), projections)

    # central differences carry round-off of order eps * |L| / h per entry;
    # gradients smaller than that budget (e.g. exactly-zero ones) are judged
    # against it rather than against themselves
    roundoff = ROUNDOFF_FACTOR * np.finfo(np.float64).eps * max(abs(loss()), 1.0) / h

    targets = [(name, p.value, analytic[name]) for name, p in params]
    if check_input:
        targets.append(("<input>", x, grads_in))

    errors = {}
    worst, worst_name = 0.0, ""
    for name, arr, grad in targets:
        flat = arr.reshape(-1)
        count = min(samples, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        numeric = np.empty(count)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        budget = max(floor, np.sqrt(count) * roundoff / tolerance)
        err = rel_error(grad.reshape(-1)[idx], numeric, budget)
        errors[name] = err
        if err > worst:
            worst, worst_name = err, name
    return GradCheckResult(worst, worst_name, errors, tolerance)
