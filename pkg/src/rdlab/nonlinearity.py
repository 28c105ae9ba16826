"""Reaction terms f, forcing terms g, and sampled certification of the
structural hypotheses (continuity, growth, dissipativity, one- and
two-sided local Lipschitz bounds).

Every registered family splits as f(u) = c*u + f_nl(u); the solver
integrates the linear part c*u exactly together with the Laplacian.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import BoxDomain, Field, lp_norm, l2_norm

FAMILIES = ("cubic_chafee_infante", "odd_power", "nonlipschitz_root")


@dataclass(frozen=True)
class NonlinearitySpec:
    """Reaction term with its structural constants.

    `linear_coeff` and `f_nl` give the split f(u) = linear_coeff*u + f_nl(u).
    `stiffness(R)` bounds |f_nl'| on [-R, R] and drives the solver's step
    guard; `lipschitz(R)` / `one_sided(R)` are closed-form L(R) when known.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    p: float
    C1: float
    C2: float
    alpha: float
    params: tuple = ()
    dfdu: Callable | None = None
    linear_coeff: float = 0.0
    f_nl: Callable | None = None
    stiffness: Callable[[float], float] | None = None
    lipschitz: Callable[[float], float] | None = None
    one_sided: Callable[[float], float] | None = None
    certified: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"growth exponent p must be >= 2, got {self.p}")
        for key in ("C1", "C2", "alpha"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be nonnegative")
        if self.f_nl is None:
            c = self.linear_coeff
            f = self.f
            object.__setattr__(self, "f_nl", lambda u: f(u) - c * u)

    def __call__(self, u):
        return self.f(np.asarray(u, dtype=float))

    def guard_rate(self, radius: float) -> float:
        if self.stiffness is None:
            return 0.0
        return float(self.stiffness(radius))

    def describe(self) -> dict:
        return {"family": self.name, "params": list(self.params), "p": self.p,
                "C1": self.C1, "C2": self.C2, "alpha": self.alpha,
                "linear_coeff": self.linear_coeff}


def custom(f, p, C1=0.0, C2=0.0, alpha=0.0, name="custom", **kwargs) -> NonlinearitySpec:
    """Ad-hoc spec from a vectorized callable; constants are as declared."""
    return NonlinearitySpec(name=name, f=f, p=p, C1=C1, C2=C2, alpha=alpha, **kwargs)


def _cubic(lam: float) -> NonlinearitySpec:
    lam = float(lam)
    pos = max(lam, 0.0)
    return NonlinearitySpec(
        name="cubic_chafee_infante", params=(lam,),
        f=lambda u: u**3 - lam * u,
        dfdu=lambda u: 3 * u**2 - lam,
        p=4.0, C1=1.0 + abs(lam),
        # u^4 - lam u^2 - u^4/2 is minimal at u^2 = lam
        C2=pos**2 / 2.0, alpha=0.5,
        linear_coeff=-lam, f_nl=lambda u: u**3,
        stiffness=lambda R: 3.0 * R**2,
        lipschitz=lambda R: max(abs(lam), abs(3.0 * R**2 - lam)),
        one_sided=lambda R: pos,
    )


def _odd_power(p: float, lam: float) -> NonlinearitySpec:
    p, lam = float(p), float(lam)
    if p < 2:
        raise ValueError(f"odd_power needs p >= 2, got {p}")
    if p == 2:
        if lam >= 1:
            raise ValueError("odd_power with p=2 needs lam < 1 to be dissipative")
        c = 1.0 - lam
        return NonlinearitySpec(
            name="odd_power", params=(p, lam),
            f=lambda u: c * u, dfdu=lambda u: np.full_like(np.asarray(u, float), c),
            p=2.0, C1=1.0 + abs(lam), C2=0.0, alpha=c,
            linear_coeff=c, f_nl=lambda u: np.zeros_like(u),
            stiffness=lambda R: 0.0,
            lipschitz=lambda R: abs(c), one_sided=lambda R: max(0.0, -c),
        )
    pos = max(lam, 0.0)
    if pos > 0:
        # maximizer of lam v^2 - v^p / 2 satisfies v^(p-2) = 4 lam / p
        v2 = (4.0 * pos / p) ** (2.0 / (p - 2.0))
        C2 = v2 * pos * (1.0 - 2.0 / p)
        alpha = 0.5
    else:
        C2, alpha = 0.0, 1.0
    return NonlinearitySpec(
        name="odd_power", params=(p, lam),
        f=lambda u: np.abs(u) ** (p - 2) * u - lam * u,
        dfdu=lambda u: (p - 1) * np.abs(u) ** (p - 2) - lam,
        p=p, C1=1.0 + abs(lam), C2=C2, alpha=alpha,
        linear_coeff=-lam, f_nl=lambda u: np.abs(u) ** (p - 2) * u,
        stiffness=lambda R: (p - 1) * R ** (p - 2),
        lipschitz=lambda R: max(abs(lam), abs((p - 1) * R ** (p - 2) - lam)),
        one_sided=lambda R: pos,
    )


def _root(p: float, theta: float, beta: float) -> NonlinearitySpec:
    p, theta, beta = float(p), float(theta), float(beta)
    if p < 2:
        raise ValueError(f"nonlipschitz_root needs p >= 2, got {p}")
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    # maximizer of beta v^(1+theta) - v^p / 2
    v = (2.0 * beta * (1.0 + theta) / p) ** (1.0 / (p - 1.0 - theta))
    C2 = beta * v ** (1.0 + theta) - 0.5 * v**p

    def f(u):
        return np.abs(u) ** (p - 2) * u - beta * np.sign(u) * np.abs(u) ** theta

    if p == 2:
        c, f_nl = 1.0, (lambda u: -beta * np.sign(u) * np.abs(u) ** theta)
    else:
        c, f_nl = 0.0, f
    return NonlinearitySpec(
        name="nonlipschitz_root", params=(p, theta, beta), f=f,
        p=p, C1=1.0 + beta, C2=C2, alpha=0.5,
        linear_coeff=c, f_nl=f_nl,
        stiffness=lambda R: (p - 1) * R ** (p - 2) if p > 2 else 0.0,
        lipschitz=lambda R: np.inf, one_sided=lambda R: np.inf,
    )


def builtin_family(name: str, params) -> NonlinearitySpec:
    """Registered model nonlinearities.

    cubic_chafee_infante [lam]          f = u^3 - lam u
    odd_power            [p, lam]       f = |u|^(p-2) u - lam u
    nonlipschitz_root    [p, theta, beta]
                                        f = |u|^(p-2) u - beta sign(u) |u|^theta
    """
    params = [float(v) for v in np.atleast_1d(params)]
    arity = {"cubic_chafee_infante": 1, "odd_power": 2, "nonlipschitz_root": 3}
    if name not in arity:
        raise ValueError(f"unknown nonlinearity family {name!r}; known: {', '.join(FAMILIES)}")
    if len(params) != arity[name]:
        raise ValueError(f"{name} takes {arity[name]} parameter(s), got {len(params)}")
    if name == "cubic_chafee_infante":
        return _cubic(*params)
    if name == "odd_power":
        return _odd_power(*params)
    return _root(*params)


# -- certification -----------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    passed: bool
    worst: float
    detail: str = ""


@dataclass(frozen=True)
class LipschitzEstimate:
    R: float
    estimate: float
    closed_form: float | None
    diverging: bool
    count: int

    @property
    def value(self) -> float:
        """Certified constant: never below a known closed form."""
        if self.diverging:
            return np.inf
        if self.closed_form is not None and np.isfinite(self.closed_form):
            return max(self.estimate, self.closed_form)
        return self.estimate


def growth_samples(sample_range=(-1e3, 1e3), count: int = 10_000) -> np.ndarray:
    """Log-spaced magnitudes of both signs plus zero, clipped to the range."""
    lo, hi = sample_range
    if count < 10_000:
        raise ValueError(f"certification needs at least 1e4 samples, got {count}")
    top = max(abs(lo), abs(hi))
    mags = np.logspace(-6, np.log10(top), count // 2)
    u = np.concatenate([-mags[::-1], [0.0], mags])
    return u[(u >= lo) & (u <= hi)]


def certify_growth(spec: NonlinearitySpec, sample_range=(-1e3, 1e3),
                   count: int = 10_000) -> Certificate:
    u = growth_samples(sample_range, count)
    ratio = np.abs(spec(u)) / (1.0 + np.abs(u) ** (spec.p - 1))
    worst = float(ratio.max())
    return Certificate(worst <= spec.C1 * (1 + 1e-12), worst, "max |f(u)| / (1 + |u|^(p-1))")


def certify_dissipativity(spec: NonlinearitySpec, sample_range=(-1e3, 1e3),
                          count: int = 10_000) -> Certificate:
    u = growth_samples(sample_range, count)
    fu = spec(u) * u
    slack = fu - spec.alpha * np.abs(u) ** spec.p + spec.C2
    tol = 1e-12 * (1.0 + np.abs(fu) + spec.alpha * np.abs(u) ** spec.p)
    worst = float(slack.min())
    return Certificate(bool(np.all(slack >= -tol)), worst, "min f(u)u - alpha|u|^p + C2")


def _pair_quotients(spec: NonlinearitySpec, R: float, count: int):
    u = np.linspace(-R, R, count)
    fu = spec(u)
    quotients = []
    stride = 1
    while stride < count:
        du = u[stride:] - u[:-stride]
        quotients.append((fu[stride:] - fu[:-stride]) / du)
        stride *= 2
    return np.concatenate(quotients)


def _lipschitz(spec, R, count, one_sided: bool) -> LipschitzEstimate:
    if R <= 0:
        raise ValueError(f"radius must be positive, got {R}")

    def estimate(n):
        q = _pair_quotients(spec, R, n)
        return float(max(0.0, (-q).max())) if one_sided else float(np.abs(q).max())

    est = estimate(count)
    finer = estimate(4 * count)
    diverging = finer > 1.5 * est + 1e-12
    closed = spec.one_sided if one_sided else spec.lipschitz
    closed_value = None if closed is None else float(closed(R))
    if closed_value is None and spec.dfdu is not None:
        d = spec.dfdu(np.linspace(-R, R, 4 * count + 1))
        closed_value = float(max(0.0, -d.min())) if one_sided else float(np.abs(d).max())
    return LipschitzEstimate(R, est, closed_value, bool(diverging), count)


def certify_one_sided_lipschitz(spec, R: float, count: int = 10_000) -> LipschitzEstimate:
    """Sampled max of -(f(u)-f(v))/(u-v) over |u|, |v| <= R, floored at 0."""
    return _lipschitz(spec, R, count, one_sided=True)


def certify_two_sided_lipschitz(spec, R: float, count: int = 10_000) -> LipschitzEstimate:
    """Sampled max of |f(u)-f(v)|/|u-v| over |u|, |v| <= R."""
    return _lipschitz(spec, R, count, one_sided=False)


def certify_all(spec: NonlinearitySpec, R: float = 1.0,
                sample_range=(-1e3, 1e3), count: int = 10_000) -> NonlinearitySpec:
    """Return a copy of `spec` with pass/fail flags for every hypothesis."""
    one = certify_one_sided_lipschitz(spec, R, count)
    two = certify_two_sided_lipschitz(spec, R, count)
    flags = {
        "continuity": bool(np.all(np.isfinite(spec(growth_samples(sample_range, count))))),
        "growth": certify_growth(spec, sample_range, count).passed,
        "dissipativity": certify_dissipativity(spec, sample_range, count).passed,
        "one_sided_lipschitz": not one.diverging,
        "two_sided_lipschitz": not two.diverging,
    }
    return dataclasses.replace(spec, certified=flags)


# -- forcing -----------------------------------------------------------------

class ForcingSpec:
    """Time-independent forcing g with its integrability tag s.

    `regime` selects the admissible exponents: "g" needs s > d/2 for
    d >= 2 (any s >= 1 for d = 1); "g2" additionally needs s >= 2 when
    d <= 3.
    """

    def __init__(self, g: Field, s: float = 2.0, regime: str = "g"):
        d = g.domain.dim
        if regime not in ("g", "g2"):
            raise ValueError(f"unknown forcing regime {regime!r}")
        if s < 1:
            raise ValueError(f"integrability exponent must be >= 1, got {s}")
        if d >= 2 and not s > d / 2:
            raise ValueError(f"forcing needs s > d/2 = {d / 2} in dimension {d}, got {s}")
        if regime == "g2" and d <= 3 and s < 2:
            raise ValueError("regime g2 needs g in L^2 for d <= 3")
        self.g = g
        self.s = float(s)
        self.regime = regime
        self.norms = {"s": lp_norm(g, self.s), "2": l2_norm(g)}

    @property
    def domain(self) -> BoxDomain:
        return self.g.domain

    @property
    def is_zero(self) -> bool:
        return not np.any(self.g.coeffs)

    def coeffs_at(self, t: float) -> np.ndarray:
        return self.g.coeffs

    def field_at(self, t: float) -> Field:
        return self.g

    @classmethod
    def zero(cls, domain: BoxDomain) -> "ForcingSpec":
        return cls(Field.zeros(domain), s=2.0)


class TimeForcing(ForcingSpec):
    """Forcing g(t) given as a callable returning Fields."""

    def __init__(self, func: Callable[[float], Field], domain: BoxDomain, s: float = 2.0):
        self.func = func
        self.g = Field.zeros(domain)
        self.s = float(s)
        self.regime = "g"
        self.norms = {}

    @property
    def is_zero(self) -> bool:
        return False

    def coeffs_at(self, t: float) -> np.ndarray:
        return self.func(t).coeffs

    def field_at(self, t: float) -> Field:
        return self.func(t)


def forcing_profile(domain: BoxDomain, profile: str, amplitude: float = 0.0,
                    s: float = 2.0) -> ForcingSpec:
    """Registered forcing shapes: zero, constant, mode1, bump."""
    if profile == "zero" or amplitude == 0.0:
        return ForcingSpec(Field.zeros(domain), s=s)
    x = domain.nodes()
    if profile == "constant":
        values = np.full(domain.shape, float(amplitude))
    elif profile == "mode1":
        values = amplitude * np.prod([np.sin(np.pi * xi / l) for xi, l in zip(x, domain.lengths)],
                                     axis=0)
    elif profile == "bump":
        r2 = sum(((xi - l / 2) / (l / 4)) ** 2 for xi, l in zip(x, domain.lengths))
        values = amplitude * np.where(r2 < 1, np.exp(-1.0 / np.maximum(1 - r2, 1e-300)), 0.0)
    else:
        raise ValueError(f"unknown forcing profile {profile!r}")
    return ForcingSpec(Field.from_nodal(domain, values), s=s)
