"""Grid search over box domains and the offline constrained oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.ravel(self.lower))
        hi = tuple(float(v) for v in np.ravel(self.upper))
        if len(lo) == 0 or len(lo) != len(hi):
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError(f"need lower < upper on every axis, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return (x.shape[0] == self.dim
                and bool(np.all(x >= np.array(self.lower) - tol))
                and bool(np.all(x <= np.array(self.upper) + tol)))

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 100
    refine_steps: int = 0

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError(f"grid resolution must be >= 2, got {self.resolution}")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be nonnegative")


def grid_points(domain: BoxDomain, resolution: int) -> np.ndarray:
    """Regular grid in lexicographic order (first axis varies slowest)."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lower, domain.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _first_argmax(values: np.ndarray, points: np.ndarray) -> int:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-finite objective {values[i]} at point {points[i].tolist()}")
    return int(np.argmax(values))


def _refine(objective, x0, value0, domain, feasible=None, step_fraction=None, max_steps=None):
    """Coordinate ascent with halving steps; never leaves the domain.

    Returns the final point and the list of objective values after each
    accepted move (non-decreasing).
    """
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    width = hi - lo
    step = np.asarray(step_fraction if step_fraction is not None else 0.01) * width
    x, fx = np.array(x0, dtype=float), float(value0)
    history = [fx]
    n_moves = 0
    while np.all(step >= 1e-4 * width):
        improved = False
        for i in range(domain.dim):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[i] = np.clip(cand[i] + sign * step[i], lo[i], hi[i])
                fc = float(objective(cand[None, :])[0])
                if not np.isfinite(fc) or fc <= fx:
                    continue
                if feasible is not None and not feasible(cand):
                    continue
                x, fx = cand, fc
                history.append(fx)
                improved = True
                n_moves += 1
                break
        if max_steps is not None and n_moves >= max_steps:
            break
        if not improved:
            step = step / 2.0
    return x, fx, history


def grid_argmax(objective, domain: BoxDomain, grid: GridSpec, return_index: bool = False):
    """Maximise ``objective`` (vectorised over rows) over the grid.

    Ties go to the lowest lexicographic grid index.  With ``refine_steps > 0``
    the grid winner is polished by coordinate ascent.
    """
    pts = grid_points(domain, grid.resolution)
    vals = np.asarray(objective(pts), dtype=float)
    idx = _first_argmax(vals, pts)
    x = pts[idx]
    if grid.refine_steps > 0:
        frac = 1.0 / (grid.resolution - 1)
        x, _, _ = _refine(objective, x, vals[idx], domain, step_fraction=frac,
                          max_steps=grid.refine_steps)
    return (x, idx) if return_index else x


def constrained_oracle(f, g, domain: BoxDomain, grid: GridSpec):
    """Best feasible grid point of ``max f s.t. g <= 0``, optionally refined.

    Returns ``(x_star, f_star)``.
    """
    pts = grid_points(domain, grid.resolution)
    fv = np.asarray(f(pts), dtype=float)
    gv = np.asarray(g(pts), dtype=float)
    feasible = gv <= 0.0
    if not feasible.any():
        raise ValueError("no feasible grid point: environment misconfigured")
    masked = np.where(feasible, fv, -np.inf)
    idx = int(np.argmax(masked))
    x, fx = pts[idx], float(fv[idx])
    if grid.refine_steps > 0:
        frac = 1.0 / (grid.resolution - 1)
        x, fx, _ = _refine(f, x, fx, domain,
                           feasible=lambda c: float(g(c[None, :])[0]) <= 0.0,
                           step_fraction=frac, max_steps=grid.refine_steps)
    return np.asarray(x), float(fx)


class GridOptimizer:
    """Finite search set used by the policy; ``argmax`` returns ``(index, point)``."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("empty candidate set")

    @classmethod
    def from_domain(cls, domain: BoxDomain, resolution: int = 100):
        opt = cls(grid_points(domain, resolution))
        opt.domain = domain
        return opt

    def __len__(self):
        return self.points.shape[0]

    def argmax(self, objective):
        vals = np.asarray(objective(self.points), dtype=float)
        idx = _first_argmax(vals, self.points)
        return idx, self.points[idx]
