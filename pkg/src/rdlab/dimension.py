"""Fractal-dimension bounds from a Lipschitz map with a contracting tail.

Given l (Lipschitz constant of the time-t map on the attractor) and
delta (contraction of its component orthogonal to the first N Laplacian
modes), any eta with (6 sqrt2 l)^N (sqrt2 delta)^eta < 1 bounds the
fractal dimension by N + eta.  For the flow, l = e^{Lt} and

    delta(t, N) = e^{-lambda_{N+1} t} + L e^{Lt} / (L + lambda_{N+1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .fields import BoxDomain
from .reporting import dumps

SQRT2 = math.sqrt(2.0)
DELTA_MAX = 1 / SQRT2


# -- spectrum ----------------------------------------------------------------

@dataclass
class SpectrumTable:
    lengths: tuple
    eigenvalues: np.ndarray          # ascending, with multiplicity
    multiplicities: list             # (value, count) for distinct values
    D_asym: float                    # min_N lambda_N / N^(2/d) over the table

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def __len__(self):
        return len(self.eigenvalues)

    def __getitem__(self, N: int) -> float:
        """lambda_N with 1-based N."""
        if N < 1:
            raise IndexError("eigenvalues are numbered from 1")
        return float(self.eigenvalues[N - 1])


def _enumerate(lengths, bound: float) -> np.ndarray:
    axes = [np.arange(1, int(l * math.sqrt(bound) / math.pi) + 1) for l in lengths]
    if any(len(a) == 0 for a in axes):
        return np.zeros(0)
    grids = np.meshgrid(*[(a * math.pi / l) ** 2 for a, l in zip(axes, lengths)], indexing="ij")
    vals = sum(grids).ravel()
    return np.sort(vals[vals <= bound])


def laplacian_spectrum(domain, count: int, fit_upto: int = 10_000) -> SpectrumTable:
    """First `count` Dirichlet eigenvalues of the box, with multiplicity."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lengths = domain.lengths if isinstance(domain, BoxDomain) else tuple(np.atleast_1d(domain))
    d = len(lengths)
    need = max(count, fit_upto)
    bound = sum((math.pi / l) ** 2 for l in lengths)
    vals = _enumerate(lengths, bound)
    while len(vals) < need:
        bound *= 2
        vals = _enumerate(lengths, bound)
    vals = vals[:need]
    distinct, counts = [], []
    for v in vals[:count]:
        if distinct and abs(v - distinct[-1]) <= 1e-12 * v:
            counts[-1] += 1
        else:
            distinct.append(float(v))
            counts.append(1)
    n = np.arange(1, min(len(vals), fit_upto) + 1)
    D = float(np.min(vals[:len(n)] / n ** (2.0 / d)))
    return SpectrumTable(tuple(lengths), vals[:count], list(zip(distinct, counts)), D)


# -- the abstract bound --------------------------------------------------------

def contraction_delta(L: float, lambda_next: float, t: float) -> float:
    if L < 0 or not lambda_next > 0 or not t > 0:
        raise ValueError("need L >= 0, lambda_next > 0, t > 0")
    return math.exp(-lambda_next * t) + L * math.exp(L * t) / (L + lambda_next)


def log_sigma(l: float, delta: float, N: float, eta: float) -> float:
    return N * math.log(6 * SQRT2 * l) + eta * math.log(SQRT2 * delta)


@dataclass
class AbstractBound:
    eta: float          # threshold found by bisection on sigma(eta) = 1
    eta_closed: float   # N log(6 sqrt2 l) / (-log(sqrt2 delta))
    bound: float        # N + eta
    log_sigma: float    # at eta; negative


def abstract_bound(l: float, delta: float, N: int) -> AbstractBound:
    """Smallest eta with sigma < 1, by search and in closed form."""
    if l < 1:
        raise ValueError(f"Lipschitz factor must be >= 1, got {l}")
    if not 0 < delta < DELTA_MAX:
        raise ValueError(f"delta must lie in (0, 1/sqrt2), got {delta}")
    if N < 0:
        raise ValueError("N must be nonnegative")
    closed = N * math.log(6 * SQRT2 * l) / (-math.log(SQRT2 * delta))
    if N == 0:
        return AbstractBound(0.0, 0.0, 0.0, 0.0)
    hi = 1.0
    while log_sigma(l, delta, N, hi) >= 0:
        hi *= 2
    root = brentq(lambda e: log_sigma(l, delta, N, e), 0.0, hi, xtol=1e-15)
    eta = root
    while log_sigma(l, delta, N, eta) >= 0:
        eta = math.nextafter(eta, math.inf)
    return AbstractBound(eta, closed, N + eta, log_sigma(l, delta, N, eta))


# -- bound selection -----------------------------------------------------------

def paper_time(L: float, lambda_next: float) -> float:
    """t with 12 e^{(L - lambda_{N+1}) t} = 1/2."""
    return math.log(24.0) / (lambda_next - L)


@dataclass
class ExplicitRoute:
    L: float
    d: int
    D_asym: float
    alpha_slack: float
    K: float
    C: float
    N: int
    t: float
    lambda_next: float
    bound_2N: float
    bound: float                  # C L^(d/2)
    first_relation: float         # 12 e^{(L - lambda) t}, equals 1/2
    second_relation: float        # L e^{2Lt} / (L + lambda)
    second_limit: float           # 1 / (24 + alpha)
    twelve_l_delta: float
    satisfied: bool
    diagnostic: str = ""


def paper_constants(L: float, d: int, D_asym: float, alpha_slack: float = 1.0,
                    spectrum: SpectrumTable | None = None) -> ExplicitRoute:
    """Explicit (t, N) with 12 l delta < 1 and the bound 2N <= C L^(d/2).

    Without a spectrum, lambda_{N+1} is replaced by its lower bound
    D (N+1)^(2/d).
    """
    if not alpha_slack > 0:
        raise ValueError("alpha_slack must be positive")
    if L < 0 or not D_asym > 0:
        raise ValueError("need L >= 0 and D_asym > 0")
    K = (24 * (24 + alpha_slack) - 1) / D_asym
    C = 2 * K ** (d / 2)
    route = ExplicitRoute(L, d, D_asym, alpha_slack, K, C, 0, 0.0, math.nan, 0.0, C * L ** (d / 2),
                       math.nan, math.nan, 1 / (24 + alpha_slack), math.nan, True)
    lam1 = spectrum[1] if spectrum is not None else D_asym
    if lam1 >= 3 * L:
        route.bound = 0.0
        route.diagnostic = "lambda_1 >= 3L: the attractor is a single point"
        return route
    N = max(1, math.floor((K * L) ** (d / 2)))
    route.N = N
    route.bound_2N = 2.0 * N
    if spectrum is not None and N + 1 > len(spectrum):
        route.satisfied = False
        route.diagnostic = f"spectrum has {len(spectrum)} values, route needs {N + 1}"
        return route
    lam = spectrum[N + 1] if spectrum is not None else D_asym * (N + 1) ** (2 / d)
    t = paper_time(L, lam)
    route.t, route.lambda_next = t, lam
    route.first_relation = 12 * math.exp((L - lam) * t)
    route.second_relation = L * math.exp(2 * L * t) / (L + lam)
    route.twelve_l_delta = 12 * math.exp(L * t) * contraction_delta(L, lam, t)
    route.satisfied = bool(route.second_relation <= route.second_limit
                           and route.twelve_l_delta < 1)
    if not route.satisfied:
        route.diagnostic = "sufficient inequalities fail at the chosen (t, N)"
    return route


@dataclass
class SearchResult:
    feasible: bool
    N: int
    t: float
    l: float
    delta: float
    eta: float
    bound: float
    log_sigma: float
    lambda_next: float
    binding: str = ""


def default_t_grid() -> np.ndarray:
    return np.geomspace(1e-3, 10.0, 241)


def search_bound(L: float, spectrum: SpectrumTable, t_grid=None, N_max: int | None = None
                 ) -> SearchResult:
    """Minimize N + eta over N <= N_max and t in t_grid plus, for each N,
    the time used by the explicit route.  Ties go to smaller N, then t."""
    if spectrum[1] > L:
        return SearchResult(True, 0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, spectrum[1],
                            "lambda_1 > L: the attractor is a single point")
    grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    N_max = len(spectrum) - 1 if N_max is None else min(N_max, len(spectrum) - 1)
    best = None
    min_delta = math.inf
    for N in range(1, N_max + 1):
        lam = spectrum[N + 1]
        times = list(grid)
        if lam > L:
            times.append(paper_time(L, lam))
        for t in sorted(set(float(v) for v in times)):
            delta = contraction_delta(L, lam, t)
            min_delta = min(min_delta, delta)
            if not delta < DELTA_MAX:
                continue
            l = math.exp(L * t)
            ab = abstract_bound(l, delta, N)
            key = (ab.bound, N, t)
            if best is None or key < best[0]:
                best = (key, SearchResult(True, N, t, l, delta, ab.eta, ab.bound, ab.log_sigma,
                                          lam))
    if best is None:
        return SearchResult(False, 0, math.nan, math.nan, min_delta, math.nan, math.inf,
                            math.nan, math.nan,
                            f"delta >= 1/sqrt2 on the whole grid (smallest {min_delta:.4g})")
    return best[1]


# -- box counting ------------------------------------------------------------

@dataclass
class BoxCount:
    slope: float
    stderr: float
    eps: list
    counts: list
    window: list          # eps values used in the fit
    decided: bool


def project(sample, projection_modes: int) -> np.ndarray:
    """Coordinates on the leading sine modes, scaled so Euclidean distance
    is the L2 distance of the projections."""
    dom = sample.domain
    order = np.argsort(dom.eigenvalues().ravel(), kind="stable")[:projection_modes]
    return sample.vectors()[:, order]


def count_boxes(points: np.ndarray, eps: float, offsets: int = 4) -> int:
    """Fewest occupied eps-cells over a few deterministic grid shifts."""
    best = None
    for j in range(offsets):
        cells = np.floor(points / eps + j / offsets).astype(np.int64)
        n = len(np.unique(cells, axis=0))
        best = n if best is None else min(best, n)
    return int(best)


def box_counting(points, projection_modes: int | None = None, eps_grid=None,
                 max_fill: float = 0.2) -> BoxCount:
    """Least-squares slope of log n_eps against log(1/eps).

    `points` is an AttractorSample (projected onto `projection_modes`
    leading modes) or an array of coordinates.  An eps enters the fit when
    n_eps <= max_fill * (number of points), i.e. the sample resolves it.
    """
    if hasattr(points, "vectors"):
        pts = project(points, projection_modes or points.points[0].size)
    else:
        pts = np.asarray(points, dtype=float)
        pts = pts.reshape(len(pts), -1)
    if eps_grid is None:
        diam = float(np.max(np.ptp(pts, axis=0))) if len(pts) > 1 else 1.0
        eps_grid = (diam or 1.0) * 2.0 ** -np.arange(2, 9)
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    counts = np.array([count_boxes(pts, e) for e in eps])
    use = counts <= max(1.0, max_fill * len(pts))
    window = eps[use]
    if len(window) < 3:
        return BoxCount(math.nan, math.nan, list(eps), list(counts), list(window), False)
    x = np.log(1 / window)
    y = np.log(counts[use])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    var = float(resid @ resid) / dof if dof > 0 else 0.0
    stderr = math.sqrt(var / float(np.sum((x - x.mean()) ** 2)))
    return BoxCount(float(coef[0]), stderr, [float(e) for e in eps], [int(c) for c in counts],
                    [float(w) for w in window], True)


# -- report ----------------------------------------------------------------

@dataclass
class DimensionReport:
    L: float
    R: float
    search: SearchResult
    paper: ExplicitRoute
    box_counting: BoxCount | None = None
    spectrum_head: list = field(default_factory=list)
    D_asym: float = math.nan

    def consistent(self) -> bool:
        """Reported bounds satisfy their own hypotheses and dominate the
        empirical slope."""
        ok = True
        s = self.search
        if s.feasible and s.N > 0:
            ok &= s.delta < DELTA_MAX and s.log_sigma < 0
        if self.box_counting is not None and self.box_counting.decided and s.feasible:
            ok &= s.bound >= self.box_counting.slope - self.box_counting.stderr
        return bool(ok)

    def to_json(self) -> str:
        return dumps(self)
