"""Time integration of u_t - Lap u + f(u) = g on boxes.

Diffusion and the linear part of f are integrated exactly per sine mode;
the remaining reaction and the forcing are handled by exponential time
differencing (ETD1 or the two-stage ETD2RK of Cox & Matthews).  Because
ETD schemes reproduce every fixed point of the semi-discrete system, the
equilibria found by Newton on the same discrete residual are exact fixed
points of `simulate`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import exprel

from .fields import (BoxDomain, Field, big_phi, coeffs_to_nodal, h1_seminorm, l2_norm,
                     lp_norm, nodal_to_coeffs, positive_part)
from .nonlinearity import ForcingSpec, NonlinearitySpec, TimeForcing

SCHEMES = ("etd1", "etd2rk")
GUARD = 0.1  # max h * |f_nl'| on the current amplitude


class BlowUpError(FloatingPointError):
    """Integration produced non-finite values; carries the last finite state."""

    def __init__(self, time: float, state: Field):
        super().__init__(f"non-finite state after t={time:.6g}")
        self.time = time
        self.state = state


def eigenvalues(domain: BoxDomain) -> np.ndarray:
    return domain.eigenvalues()


def fine_shape(domain: BoxDomain) -> tuple[int, ...]:
    """3/2-rule padded grid size per axis."""
    return tuple((3 * (n + 1)) // 2 - 1 for n in domain.resolution)


class Reaction:
    """Dealiased evaluation of nodal nonlinearities in coefficient space.

    Works on arrays whose trailing axes are the domain axes, so a batch of
    states can be pushed through at once.
    """

    def __init__(self, domain: BoxDomain, dealias: bool = True):
        self.domain = domain
        self.shape = fine_shape(domain) if dealias else domain.shape
        self.axes = tuple(range(-domain.dim, 0))

    def to_fine(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs_to_nodal(coeffs, axes=self.axes, out_shape=self.shape)

    def from_fine(self, values: np.ndarray) -> np.ndarray:
        return nodal_to_coeffs(values, axes=self.axes, keep=self.domain.shape)

    def apply(self, coeffs: np.ndarray, func) -> np.ndarray:
        return self.from_fine(func(self.to_fine(coeffs)))

    def jacobian(self, coeffs: np.ndarray, dfunc) -> np.ndarray:
        """Symmetric matrix of a -> apply(a, func) at `coeffs`, flattened."""
        size = int(np.prod(self.domain.shape))
        basis = np.eye(size).reshape((size,) + self.domain.shape)
        modes = self.to_fine(basis).reshape(size, -1)
        weights = dfunc(self.to_fine(coeffs)).ravel()
        scale = np.prod([2.0 / (m + 1) for m in self.shape])
        return scale * (modes * weights) @ modes.T


def _phi2(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    out = (np.expm1(zs) - zs) / zs**2
    series = 0.5 + z / 6 + z**2 / 24 + z**3 / 120
    return np.where(small, series, out)


class Integrator:
    """ETD stepping for one (domain, nonlinearity, forcing) triple."""

    def __init__(self, domain: BoxDomain, spec: NonlinearitySpec, forcing: ForcingSpec | None = None,
                 scheme: str = "etd2rk", dealias: bool = True):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; known: {', '.join(SCHEMES)}")
        self.domain = domain
        self.spec = spec
        self.forcing = forcing if forcing is not None else ForcingSpec.zero(domain)
        if self.forcing.domain != domain:
            raise ValueError("forcing lives on a different domain")
        self.scheme = scheme
        self.reaction = Reaction(domain, dealias)
        self.linear = -(eigenvalues(domain) + spec.linear_coeff)
        self._coef_cache: dict[float, tuple] = {}

    def coefficients(self, h: float):
        cached = self._coef_cache.get(h)
        if cached is None:
            z = self.linear * h
            cached = (np.exp(z), h * exprel(z), h * _phi2(z))
            if len(self._coef_cache) < 64:
                self._coef_cache[h] = cached
        return cached

    def remainder(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        """Coefficients of g(t) - f_nl(u)."""
        return self.forcing.coeffs_at(t) - self.reaction.apply(coeffs, self.spec.f_nl)

    def residual(self, coeffs: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Coefficients of -Lap u + f(u) - g for the discrete system."""
        return -self.linear * coeffs - self.remainder(coeffs, t)

    def raw_step(self, coeffs: np.ndarray, h: float, t: float = 0.0) -> np.ndarray:
        E, P1, P2 = self.coefficients(h)
        n0 = self.remainder(coeffs, t)
        a = E * coeffs + P1 * n0
        if self.scheme == "etd1":
            return a
        return a + P2 * (self.remainder(a, t + h) - n0)

    def max_substep(self, coeffs: np.ndarray) -> float:
        amp = float(np.abs(coeffs_to_nodal(coeffs)).max(initial=0.0))
        rate = self.spec.guard_rate(amp)
        return math.inf if rate <= 0 else GUARD / rate

    def advance(self, coeffs: np.ndarray, dt: float, t: float = 0.0) -> np.ndarray:
        """Cover [t, t+dt], substepping while the reaction guard is binding."""
        elapsed = 0.0
        while True:
            remaining = dt - elapsed
            h = min(self.max_substep(coeffs), remaining)
            if remaining - h <= 1e-12 * dt:
                h = remaining
            coeffs = self.raw_step(coeffs, h, t + elapsed)
            if not np.all(np.isfinite(coeffs)):
                return coeffs
            if h == remaining:
                return coeffs
            elapsed += h


def step(u: Field, dt: float, spec: NonlinearitySpec, forcing: ForcingSpec | None = None,
         scheme: str = "etd2rk", t: float = 0.0) -> Field:
    """One unguarded ETD step of size dt."""
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    out = Integrator(u.domain, spec, forcing, scheme).raw_step(u.coeffs, dt, t)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(t, u)
    return Field(u.domain, out)


@dataclass
class Trajectory:
    """Snapshots of one solution plus per-step norm logs.

    `log` holds equal-length arrays keyed by time, l2, linf, h1 and
    lm_<m> for each requested exponent.
    """

    times: np.ndarray
    states: list
    log: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if self.states and any(s.domain != self.states[0].domain for s in self.states):
            raise ValueError("all states must share one domain")

    @property
    def domain(self) -> BoxDomain:
        return self.states[0].domain

    @property
    def final(self) -> Field:
        return self.states[-1]

    def coeff_stack(self) -> np.ndarray:
        return np.stack([s.coeffs for s in self.states])

    def nodal_stack(self) -> np.ndarray:
        return np.stack([s.nodal for s in self.states])

    def window(self, t0: float, t1: float, slack: float = 1e-9):
        idx = np.nonzero((self.times >= t0 - slack) & (self.times <= t1 + slack))[0]
        return idx

    def at(self, t: float, slack: float = 1e-9) -> Field:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > slack * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.states[i]

    def write_log_csv(self, path) -> None:
        keys = ["time", "l2", "linf", "h1"] + sorted(k for k in self.log if k.startswith("lm_"))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(keys)
            for row in zip(*(self.log[k] for k in keys)):
                writer.writerow([repr(float(v)) for v in row])


@dataclass
class CompleteTrajectorySegment:
    """Forward solution started on an unstable direction of an equilibrium;
    its backward limit is that equilibrium."""

    trajectory: Trajectory
    backward_limit: Field
    direction: int
    amplitude: float
    forward_limit: int | None = None
    forward_distance: float = math.nan


def _norm_row(u: Field, log_m) -> dict:
    row = {"l2": l2_norm(u), "linf": lp_norm(u, np.inf), "h1": h1_seminorm(u)}
    for m in log_m:
        row[f"lm_{m:g}"] = lp_norm(u, m)
    return row


def simulate(u0: Field, spec: NonlinearitySpec, forcing: ForcingSpec | None = None,
             dt: float = 0.01, horizon: float = 1.0, snapshot_times=None,
             snapshot_every: int = 1, scheme: str = "etd2rk", log_m=(),
             integrator: Integrator | None = None) -> Trajectory:
    """Integrate from u0 over [0, horizon] on the uniform grid n*dt.

    Snapshots are kept every `snapshot_every` steps or at `snapshot_times`
    (which must lie on the grid). Norms are logged at every grid point.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    nsteps = int(round(horizon / dt))
    if abs(nsteps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    integ = integrator or Integrator(u0.domain, spec, forcing, scheme)
    if snapshot_times is None:
        keep = set(range(0, nsteps + 1, snapshot_every)) | {nsteps}
    else:
        keep = set()
        for t in np.atleast_1d(snapshot_times):
            n = int(round(t / dt))
            if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= n <= nsteps:
                raise ValueError(f"snapshot time {t} is not on the dt grid within the horizon")
            keep.add(n)

    coeffs = np.array(u0.coeffs)
    times, states = [], []
    rows = {k: [] for k in ["time", "l2", "linf", "h1"] + [f"lm_{m:g}" for m in log_m]}

    def record(n, state):
        t = n * dt
        rows["time"].append(t)
        for k, v in _norm_row(state, log_m).items():
            rows[k].append(v)
        if n in keep:
            times.append(t)
            states.append(state)

    state = u0
    record(0, state)
    for n in range(nsteps):
        new = integ.advance(coeffs, dt, n * dt)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(n * dt, state)
        coeffs = new
        state = Field(u0.domain, coeffs)
        record(n + 1, state)

    meta = {"scheme": integ.scheme, "dt": dt, "horizon": horizon,
            "spec": spec, "forcing": integ.forcing}
    return Trajectory(np.array(times), states, {k: np.array(v) for k, v in rows.items()}, meta)


def manufactured_trajectory(domain: BoxDomain, times, func, meta=None) -> Trajectory:
    """Trajectory sampled from a closed-form u(t, *x)."""
    x = domain.nodes()
    states = [Field.from_nodal(domain, func(t, *x)) for t in times]
    return Trajectory(np.asarray(times), states, {}, dict(meta or {}))


class BumpProfile:
    """Test profile eta(t) = c ((t-a)(b-t))^3 on (a, b), normalized to unit mass."""

    def __init__(self, a: float, b: float):
        if not b > a:
            raise ValueError("bump support must be a nonempty interval")
        self.a, self.b = float(a), float(b)
        self.c = 140.0 / (self.b - self.a) ** 7

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = np.clip((t - self.a) * (self.b - t), 0.0, None)
        return self.c * s**3

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t > self.a) & (t < self.b)
        s = (t - self.a) * (self.b - t)
        return np.where(inside, 3 * self.c * s**2 * (self.a + self.b - 2 * t), 0.0)


def weak_residual(traj: Trajectory, v: Field, eta: BumpProfile,
                  spec: NonlinearitySpec | None = None, forcing: ForcingSpec | None = None) -> float:
    """Time-quadrature value of the weak form tested with v(x) eta(t)."""
    spec = spec or traj.meta.get("spec")
    forcing = forcing or traj.meta.get("forcing") or ForcingSpec.zero(traj.domain)
    if v.domain != traj.domain:
        raise ValueError("test function lives on a different grid")
    if spec is None:
        raise ValueError("weak_residual needs a nonlinearity")
    reaction = Reaction(traj.domain)
    lam = eigenvalues(traj.domain)
    w = traj.domain.mode_norm2
    coeffs = traj.coeff_stack()
    fu = reaction.apply(coeffs, spec.f)
    g = np.stack([forcing.coeffs_at(t) for t in traj.times])
    axes = tuple(range(1, coeffs.ndim))
    uv = np.sum(coeffs * v.coeffs, axis=axes) * w
    bulk = np.sum((lam * coeffs + fu - g) * v.coeffs, axis=axes) * w
    t = traj.times
    return float(trapezoid(-uv * eta.derivative(t) + bulk * eta(t), t))


def ibp_identity_check(traj: Trajectory, k: float, m: float, eta: BumpProfile):
    """Both sides of the truncated integration-by-parts identity.

    lhs = int <u_t, (T_k u+)^(2m-1)> eta dt   (u_t by 2nd-order differences)
    rhs = -int Phi_{k,m}(u+) eta' dt
    """
    if len(traj.times) < 5:
        raise ValueError("need at least 5 snapshots to differentiate in time")
    if m < 1 or not k > 0:
        raise ValueError("need m >= 1 and k > 0")
    t = traj.times
    nodal = traj.nodal_stack()
    ut = np.gradient(nodal, t, axis=0, edge_order=2)
    test = np.clip(np.maximum(nodal, 0.0), None, k) ** (2 * m - 1)
    h = traj.domain.cell_volume
    pairing = np.sum(ut * test, axis=tuple(range(1, nodal.ndim))) * h
    potential = np.array([big_phi(positive_part(u), k, m) for u in traj.states])
    lhs = trapezoid(pairing * eta(t), t)
    rhs = -trapezoid(potential * eta.derivative(t), t)
    return float(lhs), float(rhs)


@dataclass
class DecayCheck:
    alpha: float
    K: float
    violations: int
    alpha_fit: float
    K_fit: float
    worst_excess: float


def decay_constants(spec: NonlinearitySpec, forcing: ForcingSpec | None, domain: BoxDomain):
    """(rate, K) with ||u(t)||_2 <= ||u0||_2 e^(-rate t) + K from the energy
    estimate, Poincare (lambda_1) and the dissipativity bound."""
    lam1 = float(eigenvalues(domain).min())
    vol = domain.measure
    if spec.p == 2:
        c, base = spec.alpha, spec.C2 * vol
    else:
        # alpha ||u||_p^p >= c ||u||_2^p >= c (||u||_2^2 - 1)
        c = spec.alpha * vol ** ((2.0 - spec.p) / 2.0)
        base = c + spec.C2 * vol
    if isinstance(forcing, TimeForcing):
        raise ValueError("decay constants need a time-independent forcing")
    gnorm = 0.0 if forcing is None or forcing.is_zero else l2_norm(forcing.g)
    if gnorm == 0.0:
        rate, B = lam1 + c, base
    else:
        rate, B = lam1 / 2 + c, base + gnorm**2 / (2 * lam1)
    return rate, math.sqrt(max(B, 0.0) / rate)


def l2_decay_check(traj: Trajectory, spec: NonlinearitySpec | None = None,
                   forcing: ForcingSpec | None = None, rtol: float = 1e-9) -> DecayCheck:
    spec = spec or traj.meta["spec"]
    forcing = forcing or traj.meta.get("forcing")
    rate, K = decay_constants(spec, forcing, traj.domain)
    t = traj.log["time"] - traj.log["time"][0]
    l2 = traj.log["l2"]
    u0 = l2[0]
    tol = rtol * (1.0 + u0)

    def excess(a, k):
        return l2 - (u0 * np.exp(-a * t) + k)

    ex = excess(rate, K)
    violations = int(np.sum(ex > tol))
    K_fit = float(max(0.0, (l2 - u0 * np.exp(-rate * t)).max()))
    lo, hi = 0.0, 4 * rate + 10.0
    if np.any(excess(lo, K) > tol):
        alpha_fit = math.nan
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if not np.any(excess(mid, K) > tol) else (lo, mid)
        alpha_fit = lo
    return DecayCheck(rate, K, violations, alpha_fit, K_fit, float(ex.max()))
