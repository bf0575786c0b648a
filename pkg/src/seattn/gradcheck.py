"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, grad, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max_rel_err={self.max_rel_err:.3e} "
            f"max_abs_err={self.max_abs_err:.3e} tol={self.tol:.0e} n={self.n_checked}"
        )


def _pick(size: int, n_coords: int | None, seed: int) -> np.ndarray:
    if n_coords is None or n_coords >= size:
        return np.arange(size)
    return np.sort(np.random.default_rng(seed).choice(size, n_coords, replace=False))


def _compare(name, analytic, numeric, tol) -> GradCheckReport:
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    err = np.abs(analytic - numeric)
    # coordinates with near-zero gradients are judged against 0.1% of the largest one
    floor = max(1e-3 * float(np.abs(numeric).max(initial=0.0)), 1e-10)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return GradCheckReport(
        name=name,
        max_abs_err=float(err.max(initial=0.0)),
        max_rel_err=float((err / denom).max(initial=0.0)),
        tol=tol,
        n_checked=int(err.size),
    )


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int | None = None,
    seed: int = 0,
    name: str = "grad_check",
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences (64-bit)."""
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    g = grad(f(xt), xt)
    analytic = np.zeros_like(x) if g is None else g.data
    idx = _pick(x.size, n_coords, seed)
    numeric = np.empty(idx.size)
    with no_grad():
        for j, i in enumerate(idx):
            xp = x.copy()
            xp.flat[i] += eps
            fp = f(Tensor(xp)).item()
            xp.flat[i] -= 2 * eps
            fm = f(Tensor(xp)).item()
            numeric[j] = (fp - fm) / (2 * eps)
    return _compare(name, analytic.reshape(-1)[idx], numeric, tol)


def param_grad_check(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-3,
    n_coords: int | None = 8,
    seed: int = 0,
    name: str = "param",
) -> GradCheckReport:
    """Like :func:`grad_check`, for a tensor that ``loss_fn`` closes over (e.g. a Parameter)."""
    was = param.requires_grad
    param.requires_grad = True
    g = grad(loss_fn(), param)
    analytic = np.zeros(param.shape) if g is None else g.data
    idx = _pick(param.size, n_coords, seed)
    numeric = np.empty(idx.size)
    base = param.data
    try:
        with no_grad():
            for j, i in enumerate(idx):
                xp = base.copy()
                xp.flat[i] += eps
                param.data = xp
                fp = loss_fn().item()
                xp = base.copy()
                xp.flat[i] -= eps
                param.data = xp
                fm = loss_fn().item()
                numeric[j] = (fp - fm) / (2 * eps)
    finally:
        param.data = base
        param.requires_grad = was
    return _compare(name, analytic.reshape(-1)[idx], numeric, tol)
