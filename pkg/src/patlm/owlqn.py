"""Orthant-wise limited-memory quasi-Newton minimization of smooth + L1.

Minimizes ``smooth(x) + lam * ||x||_1`` with the L-BFGS two-loop
recursion applied to the pseudo-gradient, the search direction aligned
with the pseudo-gradient's descent orthant, and every trial point
projected back onto the orthant of the current iterate (components that
cross zero are clamped to exactly 0.0, which is what makes the returned
sparsity pattern exact).  With ``lam == 0`` the orthant machinery is
bypassed and the method reduces to plain L-BFGS.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OwlqnConfig:
    memory: int = 10
    max_iter: int = 500
    grad_tol: float = 1e-5           # infinity-norm of the pseudo-gradient
    lam: float = 0.0                 # L1 coefficient
    c1: float = 1e-4                 # sufficient-decrease constant
    backtrack: float = 0.5           # step shrink ratio
    max_backtracks: int = 50

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack ratio must be in (0, 1)")
        if not 0 < self.c1 < 0.5:
            raise ValueError("sufficient-decrease constant must be in (0, 0.5)")


@dataclass
class OwlqnResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    status: str
    log: list[dict] = field(default_factory=list)

    def __iter__(self):
        # (x*, objective*, iterations) unpacking
        return iter((self.x, self.objective, self.iterations))

    def nonzeros(self) -> int:
        return int(np.count_nonzero(self.x))


def pseudo_gradient(x: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    """Steepest-descent surrogate of the L1 objective's subdifferential.

    At nonzero coordinates the L1 term differentiates to lam*sign(x); at
    zeros the surrogate is the smallest-magnitude element of the
    subdifferential interval [g - lam, g + lam] (zero if it straddles 0).
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError("x and g must have the same shape")
    pg = g + lam * np.sign(x)
    at_zero = x == 0
    lo = g + lam
    hi = g - lam
    pg[at_zero] = 0.0
    neg = at_zero & (lo < 0)
    pos = at_zero & (hi > 0)
    pg[neg] = lo[neg]
    pg[pos] = hi[pos]
    return pg


def _two_loop(pg: np.ndarray, mem: deque) -> np.ndarray:
    """L-BFGS two-loop recursion; returns the (descent) direction -H*pg."""
    q = -pg.copy()
    if not mem:
        return q
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = mem[-1]
    gamma = float(s @ y) / float(y @ y)
    q *= gamma
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize(smooth_and_grad, x0, cfg: OwlqnConfig) -> OwlqnResult:
    """Run OWL-QN from ``x0``; ``smooth_and_grad(x) -> (value, gradient)``.

    Raises ValueError when the callback produces non-finite output at the
    starting point; later non-finite trial values are treated as line
    search rejections.  A failed line search returns the best iterate
    found so far, flagged in ``status``.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    lam = cfg.lam
    f_smooth, g = smooth_and_grad(x)
    f_smooth = float(f_smooth)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f_smooth) or not np.all(np.isfinite(g)):
        raise ValueError(
            f"objective callback returned non-finite output at x0 "
            f"(value={f_smooth!r}, |grad| finite={np.all(np.isfinite(g))})"
        )
    obj = f_smooth + lam * float(np.abs(x).sum())

    mem: deque = deque(maxlen=cfg.memory)
    log: list[dict] = []
    status = "max_iter"
    converged = False
    it = 0

    for it in range(1, cfg.max_iter + 1):
        pg = pseudo_gradient(x, g, lam)
        pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
        if pg_norm <= cfg.grad_tol:
            status = "converged"
            converged = True
            break

        d = _two_loop(pg, mem)
        if lam > 0:
            # Align the direction with the pseudo-gradient descent orthant.
            d[d * -pg <= 0] = 0.0
            if not np.any(d):
                d = -pg.copy()
            orthant = np.where(x != 0, np.sign(x), np.sign(-pg))

        step = 1.0 if mem else min(1.0, 1.0 / max(1.0, float(np.abs(pg).sum())))
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = x + step * d
            if lam > 0:
                x_new[x_new * orthant < 0] = 0.0
            f_new, g_new = smooth_and_grad(x_new)
            f_new = float(f_new)
            obj_new = f_new + lam * float(np.abs(x_new).sum())
            decrease = float(pg @ (x_new - x))
            if np.isfinite(obj_new) and obj_new <= obj + cfg.c1 * decrease:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            status = "line_search_failed"
            break

        s = x_new - x
        y = np.asarray(g_new, dtype=np.float64) - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            mem.append((s, y, 1.0 / sy))

        x, g, obj = x_new, np.asarray(g_new, dtype=np.float64), obj_new
        log.append(
            {
                "iter": it,
                "objective": obj,
                "pseudo_grad_norm": pg_norm,
                "nonzeros": int(np.count_nonzero(x)),
                "step": step,
            }
        )

    return OwlqnResult(x, obj, it, converged, status, log)


def write_iteration_log(path, result: OwlqnResult) -> None:
    """CSV: iter, objective, pseudo-grad norm, nonzero count, step size."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(
            fh, fieldnames=["iter", "objective", "pseudo_grad_norm", "nonzeros", "step"]
        )
        w.writeheader()
        for row in result.log:
            w.writerow(row)
