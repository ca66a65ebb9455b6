"""Weighted minimax polynomial approximation of activation functions.

The pipeline is a weighted least-squares start, Powell refinement of the
weighted maximum error, and a dense unweighted error measurement. An LP in
epigraph form gives the exact discrete minimax value as an independent check.

Coefficients are always stored in ascending power order (constant first).
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from heact.errors import ArgumentError, DomainError, HeactError, NumericalError, ParseError
from heact.powell import powell

DEFAULT_DOMAIN = (-7.0, 7.0)
DEFAULT_GRID_POINTS = 1401
DEFAULT_EVAL_POINTS = 100_001
NEAR_EXTREMAL = 0.95
LP_REFINE_POINTS = 10

# Degree-4 Softplus coefficients as published, ascending order (E, D, C, B, A).
PUBLISHED_SOFTPLUS4 = (0.738099333, 0.5, 0.0887234775, -1.5983e-17, -0.00068481)


class ActivationKind(str, enum.Enum):
    SOFTPLUS = "softplus"
    RELU = "relu"
    SWISH = "swish"

    @classmethod
    def parse(cls, name: str) -> "ActivationKind":
        try:
            return cls(name.lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ArgumentError(f"unknown activation {name!r}; choose from {choices}") from None

    def __call__(self, x):
        return eval_activation(self, x)


Target = Union[ActivationKind, Callable[[np.ndarray], np.ndarray]]


def eval_activation(kind: ActivationKind, x):
    """Evaluate an activation elementwise; scalars in, scalars out."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("activation input must be finite")
    if kind is ActivationKind.SOFTPLUS:
        # max(x, 0) + log(1 + e^-|x|) never overflows
        out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    elif kind is ActivationKind.RELU:
        out = np.maximum(arr, 0.0)
    elif kind is ActivationKind.SWISH:
        out = arr * expit(arr)
    else:
        raise ArgumentError(f"unknown activation {kind!r}")
    return float(out) if out.ndim == 0 else out


def _target_fn(target: Target) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(target, ActivationKind):
        return lambda x: eval_activation(target, x)
    if callable(target):
        return lambda x: np.asarray(target(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    raise ArgumentError(f"target must be an ActivationKind or a callable, got {type(target).__name__}")


def _target_name(target: Target) -> str:
    return target.value if isinstance(target, ActivationKind) else getattr(target, "__name__", "custom")


# ---------------------------------------------------------------- weights


@dataclass(frozen=True)
class WeightScheme:
    """Piecewise-constant weights: the first region containing x wins.

    Regions are closed intervals ``(lo, hi, weight)``.
    """

    regions: tuple[tuple[float, float, float], ...] = ()
    default_weight: float = 1.0

    def __post_init__(self):
        regions = tuple((float(lo), float(hi), float(w)) for lo, hi, w in self.regions)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "default_weight", float(self.default_weight))
        for lo, hi, w in regions:
            if not lo <= hi:
                raise ArgumentError(f"weight region [{lo}, {hi}] is empty")
            if not w > 0 or not math.isfinite(w):
                raise ArgumentError(f"weight {w} must be positive and finite")
        if not self.default_weight > 0 or not math.isfinite(self.default_weight):
            raise ArgumentError(f"default weight {self.default_weight} must be positive")

    @classmethod
    def three_band(cls) -> "WeightScheme":
        """3 on [-3, 3], 2 on [-7, -4] and [4, 7], 1 elsewhere."""
        return cls(((-3.0, 3.0, 3.0), (-7.0, -4.0, 2.0), (4.0, 7.0, 2.0)), 1.0)

    @classmethod
    def uniform(cls, weight: float = 1.0) -> "WeightScheme":
        return cls((), weight)

    @classmethod
    def parse(cls, spec: str) -> "WeightScheme":
        """Parse ``paper``, ``uniform`` or ``lo:hi:w,...,default``.

        The trailing bare number is the default weight and may be omitted
        (defaults to 1).
        """
        spec = spec.strip()
        if spec == "paper":
            return cls.three_band()
        if spec in ("uniform", "none"):
            return cls.uniform()
        regions = []
        default = 1.0
        items = [s.strip() for s in spec.split(",") if s.strip()]
        if not items:
            raise ArgumentError("empty weight spec")
        for i, item in enumerate(items):
            parts = item.split(":")
            try:
                if len(parts) == 3:
                    regions.append(tuple(float(p) for p in parts))
                elif len(parts) == 1 and i == len(items) - 1:
                    default = float(parts[0])
                else:
                    raise ValueError
            except ValueError:
                raise ArgumentError(
                    f"bad weight spec item {item!r}; expected lo:hi:w or a trailing default weight"
                ) from None
        return cls(tuple(regions), default)

    def to_spec(self) -> str:
        items = [f"{lo:g}:{hi:g}:{w:g}" for lo, hi, w in self.regions]
        return ",".join(items + [f"{self.default_weight:g}"])

    def weight_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, self.default_weight)
        assigned = np.zeros(x.shape, dtype=bool)
        for lo, hi, w in self.regions:
            hit = (x >= lo) & (x <= hi) & ~assigned
            out[hit] = w
            assigned |= hit
        return out


@dataclass(frozen=True, eq=False)
class SampleGrid:
    points: np.ndarray
    weights: np.ndarray
    scheme: WeightScheme | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if p.ndim != 1 or p.shape != w.shape:
            raise ArgumentError("grid points and weights must be 1-D arrays of equal length")
        if p.size < 2 or np.any(np.diff(p) <= 0):
            raise ArgumentError("grid points must be strictly increasing (at least 2)")
        if np.any(w <= 0):
            raise ArgumentError("grid weights must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    def __len__(self) -> int:
        return self.points.size


def build_grid(domain, scheme: WeightScheme, n_points: int) -> SampleGrid:
    lo, hi = (float(v) for v in domain)
    if n_points < 2:
        raise ArgumentError(f"grid needs at least 2 points, got {n_points}")
    if not lo < hi:
        raise ArgumentError(f"empty domain [{lo}, {hi}]")
    pts = np.linspace(lo, hi, int(n_points))
    return SampleGrid(pts, scheme.weight_at(pts), scheme)


# ---------------------------------------------------------------- polynomials


def eval_poly(coeffs, x):
    """Horner evaluation; accepts a :class:`PolyApprox` or a coefficient list."""
    c = coeffs.coeffs if isinstance(coeffs, PolyApprox) else np.asarray(coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for a in c[::-1]:
        acc = acc * x + a
    return float(acc) if acc.ndim == 0 else acc


def _affine_map(domain, degree: int) -> np.ndarray:
    """Matrix M with ``a = M @ c`` where ``sum c_j x^j = sum a_k t^k`` and
    ``x = mid + half * t``."""
    lo, hi = domain
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    m = np.zeros((degree + 1, degree + 1))
    for j in range(degree + 1):
        for k in range(j + 1):
            m[k, j] = math.comb(j, k) * mid ** (j - k) * half**k
    return m


def _scaled_vander(points, domain, degree):
    lo, hi = domain
    t = (points - (lo + hi) / 2.0) / ((hi - lo) / 2.0)
    return np.vander(t, degree + 1, increasing=True)


def weighted_max_residual(coeffs, grid: SampleGrid, target: Target) -> float:
    f = _target_fn(target)(grid.points)
    return float(np.max(grid.weights * np.abs(eval_poly(coeffs, grid.points) - f)))


def wls_fit(grid: SampleGrid, target: Target, degree: int) -> np.ndarray:
    """Weighted least squares: minimize sum w_i (p(x_i) - f(x_i))^2.

    Solved by QR-based least squares in a basis scaled to [-1, 1], then
    mapped back to monomials in x.
    """
    _check_degree(degree)
    if len(grid) <= degree + 1:
        raise ArgumentError(f"{len(grid)} grid points cannot determine a degree-{degree} fit")
    f = _target_fn(target)(grid.points)
    v = _scaled_vander(grid.points, grid.domain, degree)
    sw = np.sqrt(grid.weights)
    a = v * sw[:, None]
    if np.linalg.matrix_rank(a) < degree + 1:
        raise NumericalError("design matrix is rank deficient; the grid is degenerate")
    coef_t, *_ = np.linalg.lstsq(a, f * sw, rcond=None)
    # normal-equation residual as a sanity check on the solve
    lhs = a.T @ (a @ coef_t - f * sw)
    rel = np.linalg.norm(lhs) / max(np.linalg.norm(a.T @ (f * sw)), np.finfo(float).tiny)
    if rel > 1e-10:
        raise NumericalError(f"least-squares normal residual {rel:.2e} too large")
    return np.linalg.solve(_affine_map(grid.domain, degree), coef_t)


def powell_refine(init, grid: SampleGrid, target: Target, maxiter: int = 200, ftol: float = 1e-8) -> np.ndarray:
    """Minimize the weighted maximum residual on ``grid`` starting at ``init``.

    Powell on the raw maximum stalls at kinks, so it first runs on a smooth
    p-norm surrogate with p doubling from 4 to 1024 and then finishes on the
    exact maximum. Each stage obeys the same stopping rule. The result never
    has a larger objective than ``init``.
    """
    init = np.asarray(init, dtype=np.float64)
    degree = init.size - 1
    _check_degree(degree)
    f = _target_fn(target)(grid.points)
    w = grid.weights
    v = _scaled_vander(grid.points, grid.domain, degree)
    m = _affine_map(grid.domain, degree)

    def objective(a):
        return float(np.max(w * np.abs(v @ a - f)))

    a0 = m @ init
    f0 = objective(a0)
    if not np.isfinite(f0):
        raise NumericalError("objective is non-finite at the initial coefficients")
    if f0 == 0.0:
        return init.copy()
    a = a0
    for p in (4, 8, 16, 32, 64, 128, 256, 512, 1024):

        def smooth(a, p=p):
            r = w * np.abs(v @ a - f)
            top = r.max()
            if top == 0.0:
                return 0.0
            return float(top * np.mean((r / top) ** p) ** (1.0 / p))

        a = powell(smooth, a, ftol=ftol, maxiter=maxiter).x
    a = powell(objective, a, ftol=ftol, maxiter=maxiter).x
    out = np.linalg.solve(m, a)
    if weighted_max_residual(out, grid, target) > weighted_max_residual(init, grid, target):
        return init.copy()
    return out


def max_error(coeffs, target: Target, domain=DEFAULT_DOMAIN, n_eval: int = DEFAULT_EVAL_POINTS) -> tuple[float, float]:
    """Unweighted maximum of |p(x) - f(x)| on a uniform grid, and where it occurs."""
    if n_eval < 2:
        raise ArgumentError("n_eval must be at least 2")
    x = np.linspace(float(domain[0]), float(domain[1]), int(n_eval))
    err = np.abs(eval_poly(coeffs, x) - _target_fn(target)(x))
    i = int(np.argmax(err))
    return float(err[i]), float(x[i])


def _check_degree(degree: int) -> None:
    if not 0 <= degree <= 8:
        raise ArgumentError(f"degree {degree} outside the supported range 0..8")


# ---------------------------------------------------------------- LP check


@dataclass(frozen=True, eq=False)
class LpVerification:
    coeffs: np.ndarray
    e_max_weighted: float
    alternation_count: int
    grid_points: int
    refined_points: int

    def passes(self, degree: int) -> bool:
        return self.alternation_count >= degree + 2


def _solve_lp(points, weights, f, domain, degree):
    v = _scaled_vander(points, domain, degree)
    wv = weights[:, None] * v
    wf = weights * f
    n = points.size
    ones = np.ones((n, 1))
    a_ub = np.vstack([np.hstack([wv, -ones]), np.hstack([-wv, -ones])])
    b_ub = np.concatenate([wf, -wf])
    cost = np.zeros(degree + 2)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * (degree + 2), method="highs")
    if res.status != 0:
        raise HeactError(f"minimax LP failed: {res.message}")
    a, t = res.x[:-1], max(float(res.x[-1]), 0.0)
    return np.linalg.solve(_affine_map(domain, degree), a), t


def alternation_count(residual: np.ndarray, level: float, frac: float = NEAR_EXTREMAL) -> int:
    """Number of sign runs among points where |residual| >= frac * level."""
    if level <= 0:
        return 0
    near = residual[np.abs(residual) >= frac * level]
    if near.size == 0:
        return 0
    signs = np.sign(near)
    return int(1 + np.count_nonzero(signs[1:] != signs[:-1]))


def lp_minimax_verify(
    grid: SampleGrid, target: Target, degree: int, n_eval: int = DEFAULT_EVAL_POINTS,
    refine: int = LP_REFINE_POINTS,
) -> LpVerification:
    """Exact discrete weighted minimax via the epigraph LP.

    Solves min t subject to -t <= w_i (p(x_i) - f(x_i)) <= t on ``grid``,
    then inserts the ``refine`` worst points of a dense verification grid
    (weights from the grid's scheme) and solves again.
    """
    _check_degree(degree)
    f_fn = _target_fn(target)
    pts, wts = grid.points, grid.weights
    coeffs, t = _solve_lp(pts, wts, f_fn(pts), grid.domain, degree)
    added = 0
    if refine > 0 and grid.scheme is not None:
        dense = np.linspace(*grid.domain, int(n_eval))
        dw = grid.scheme.weight_at(dense)
        r = dw * np.abs(eval_poly(coeffs, dense) - f_fn(dense))
        worst = dense[np.argsort(r)[::-1][:refine]]
        new = np.setdiff1d(worst, pts)
        if new.size:
            pts = np.union1d(pts, new)
            wts = grid.scheme.weight_at(pts)
            coeffs, t = _solve_lp(pts, wts, f_fn(pts), grid.domain, degree)
            added = int(new.size)
    resid = wts * (eval_poly(coeffs, pts) - f_fn(pts))
    return LpVerification(coeffs, t, alternation_count(resid, t), int(pts.size), added)


# ---------------------------------------------------------------- rate bound


def bernstein_rho(strip_half_width: float) -> float:
    """Bernstein ellipse parameter for analyticity in a strip of half-width alpha."""
    if not strip_half_width > 0:
        raise ArgumentError("strip half-width must be positive")
    return math.exp(strip_half_width)


def bernstein_bound(strip_half_width: float, degree: int) -> float:
    """Scale-free convergence rate rho^-n; no constant prefactor is applied."""
    if degree < 0:
        raise ArgumentError("degree must be non-negative")
    return bernstein_rho(strip_half_width) ** (-degree)


# ---------------------------------------------------------------- results


@dataclass(frozen=True, eq=False)
class PolyApprox:
    activation: str
    degree: int
    coeffs: np.ndarray
    domain: tuple[float, float]
    e_max_unweighted: float
    e_max_weighted: float
    weights: WeightScheme = field(default_factory=WeightScheme.three_band)
    grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size != self.degree + 1:
            raise ArgumentError(f"expected {self.degree + 1} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))

    def __call__(self, x):
        return eval_poly(self.coeffs, x)

    def clamp(self, x):
        return np.clip(x, self.domain[0], self.domain[1])

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "degree": self.degree,
            "domain": list(self.domain),
            "coeffs_ascending": [float(c) for c in self.coeffs],
            "e_max_unweighted": self.e_max_unweighted,
            "e_max_weighted": self.e_max_weighted,
            "weights": self.weights.to_spec(),
            "grid_points": self.grid_points,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "activation") -> "PolyApprox":
        try:
            degree = int(d["degree"])
            coeffs = [float(c) for c in d["coeffs_ascending"]]
            lo, hi = (float(v) for v in d["domain"])
            out = cls(
                activation=str(d["activation"]),
                degree=degree,
                coeffs=np.array(coeffs),
                domain=(lo, hi),
                e_max_unweighted=float(d.get("e_max_unweighted", float("nan"))),
                e_max_weighted=float(d.get("e_max_weighted", float("nan"))),
                weights=WeightScheme.parse(d.get("weights", "paper")),
                grid_points=int(d.get("grid_points", DEFAULT_GRID_POINTS)),
            )
        except KeyError as e:
            raise ParseError(f"missing field {e.args[0]!r}", where) from None
        except (TypeError, ValueError, ArgumentError) as e:
            raise ParseError(str(e), where) from None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PolyApprox":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", f"line {e.lineno}") from None
        if not isinstance(d, dict):
            raise ParseError("expected a JSON object", "activation")
        return cls.from_dict(d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolyApprox":
        return cls.from_json(Path(path).read_text())

    def error_curve_csv(self, target: Target | None = None, n_eval: int = 1401) -> str:
        target = ActivationKind.parse(self.activation) if target is None else target
        x = np.linspace(*self.domain, int(n_eval))
        fx = _target_fn(target)(x)
        px = self(x)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "f(x)", "p(x)", "abs_error"])
        for row in zip(x, fx, px, np.abs(px - fx)):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def measure(
    coeffs, target: Target, domain=DEFAULT_DOMAIN, scheme: WeightScheme | None = None,
    n_grid: int = DEFAULT_GRID_POINTS, n_eval: int = DEFAULT_EVAL_POINTS,
) -> PolyApprox:
    """Wrap coefficients with their unweighted and grid-weighted maximum errors."""
    scheme = WeightScheme.three_band() if scheme is None else scheme
    coeffs = np.asarray(coeffs, dtype=np.float64)
    grid = build_grid(domain, scheme, n_grid)
    e_u, _ = max_error(coeffs, target, domain, n_eval)
    return PolyApprox(
        _target_name(target), coeffs.size - 1, coeffs, tuple(domain), e_u,
        weighted_max_residual(coeffs, grid, target), scheme, n_grid,
    )


def published_softplus() -> PolyApprox:
    return measure(PUBLISHED_SOFTPLUS4, ActivationKind.SOFTPLUS)


def fit_activation(
    target: Target, degree: int = 4, domain=DEFAULT_DOMAIN, scheme: WeightScheme | None = None,
    n_grid: int = DEFAULT_GRID_POINTS, n_eval: int = DEFAULT_EVAL_POINTS,
) -> PolyApprox:
    """WLS start, Powell minimax refinement, dense error evaluation."""
    scheme = WeightScheme.three_band() if scheme is None else scheme
    grid = build_grid(domain, scheme, n_grid)
    init = wls_fit(grid, target, degree)
    coeffs = powell_refine(init, grid, target)
    return measure(coeffs, target, domain, scheme, n_grid, n_eval)
