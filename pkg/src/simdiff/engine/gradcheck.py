"""Central-difference gradient checks run in a float64 shadow of the engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tensor import Tensor, precision


@dataclass
class GradCheckResult:
    name: str
    rel_err: float
    tol: float
    probes: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_err) and self.rel_err <= self.tol)


def check_gradients(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    *,
    wrt: list[str] | None = None,
    probes: int = 10,
    h: float = 1e-3,
    tol: float = 1e-4,
    seed: int = 0,
) -> list[GradCheckResult]:
    """Compare backprop gradients of ``fn`` with central differences.

    ``fn`` maps named tensors to any tensor; it is reduced to a scalar with a
    fixed random projection. The error per input is
    ``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` over the probe vector.
    """
    rng = np.random.default_rng(seed)
    wrt = list(inputs) if wrt is None else wrt
    with precision(np.float64):
        base = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
        out_shape = fn({k: Tensor(v) for k, v in base.items()}).shape
        proj = rng.standard_normal(out_shape)

        def scalar(arrays, grad_names=()):
            leaves = {k: Tensor(v, requires_grad=k in grad_names) for k, v in arrays.items()}
            return ops.sum(ops.mul(fn(leaves), proj)), leaves

        loss, leaves = scalar(base, wrt)
        loss.backward()
        results = []
        for name in wrt:
            analytic = leaves[name].grad
            if analytic is None:
                analytic = np.zeros_like(base[name])
            flat_n = base[name].size
            idx = rng.choice(flat_n, size=min(probes, flat_n), replace=False)
            a_vals, n_vals = [], []
            for i in idx:
                pos = np.unravel_index(i, base[name].shape)
                plus = dict(base)
                minus = dict(base)
                plus[name] = base[name].copy()
                minus[name] = base[name].copy()
                plus[name][pos] += h
                minus[name][pos] -= h
                fp = scalar(plus)[0].item()
                fm = scalar(minus)[0].item()
                n_vals.append((fp - fm) / (2 * h))
                a_vals.append(analytic[pos])
            a_vals, n_vals = np.array(a_vals), np.array(n_vals)
            denom = max(np.linalg.norm(a_vals), np.linalg.norm(n_vals), 1e-12)
            results.append(GradCheckResult(name, float(np.linalg.norm(a_vals - n_vals) / denom), tol, len(idx)))
        return results
