"""Equilibria, linearized spectra, unstable-manifold shooting and sampled
checks of the attractor structure (attractor = unstable set of the
equilibria = set of points whose forward orbits converge to them).

All equilibria are zeros of the same discrete residual the ETD solver
uses, so they are exact fixed points of `simulate`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .fields import BoxDomain, Field, l2_norm, lp_norm
from .nonlinearity import ForcingSpec, NonlinearitySpec
from .rng import generator, random_field
from .solver import (CompleteTrajectorySegment, Integrator, Trajectory, decay_constants,
                     simulate)

log = logging.getLogger(__name__)


@dataclass
class Equilibrium:
    state: Field
    residual: float
    spectrum: np.ndarray
    morse_index: int
    vectors: np.ndarray = field(repr=False, default=None)

    def unstable_directions(self) -> list[Field]:
        return [Field(self.state.domain, self.vectors[:, i].reshape(self.state.domain.shape))
                for i in range(self.morse_index)]


def _l2_of_coeffs(domain: BoxDomain, coeffs: np.ndarray) -> float:
    return float(np.sqrt(np.sum(coeffs**2) * domain.mode_norm2))


def _derivative(spec: NonlinearitySpec):
    if spec.dfdu is not None:
        return spec.dfdu
    eps = 1e-7

    def d(u):
        return (spec.f(u + eps) - spec.f(u - eps)) / (2 * eps)
    return d


def jacobian(integ: Integrator, coeffs: np.ndarray) -> np.ndarray:
    """Matrix of v -> -Lap v + f'(u) v in the sine basis (symmetric)."""
    lam = -integ.linear.ravel() - integ.spec.linear_coeff
    dfnl = _derivative(integ.spec)
    c = integ.spec.linear_coeff

    def dnl(u):
        return dfnl(u) - c

    J = integ.reaction.jacobian(coeffs, dnl)
    J[np.diag_indices_from(J)] += lam + c
    return 0.5 * (J + J.T)


def newton(integ: Integrator, guess: np.ndarray, tol: float = 1e-11, max_iter: int = 60):
    """Damped Newton on the spectral residual; returns (coeffs, residual) or None."""
    dom = integ.domain
    a = np.array(guess, dtype=float)
    r = integ.residual(a)
    rn = _l2_of_coeffs(dom, r)
    for _ in range(max_iter):
        if rn <= tol:
            return a, rn
        J = jacobian(integ, a)
        try:
            delta = np.linalg.solve(J, -r.ravel()).reshape(dom.shape)
        except np.linalg.LinAlgError:
            return None
        s = 1.0
        while s > 1e-4:
            trial = a + s * delta
            rt = integ.residual(trial)
            rtn = _l2_of_coeffs(dom, rt)
            if np.isfinite(rtn) and rtn < (1 - s / 4) * rn:
                a, r, rn = trial, rt, rtn
                break
            s /= 2
        else:
            return None
    return (a, rn) if rn <= tol else None


def linearized_spectrum(z: Field, spec: NonlinearitySpec, count: int | None = None,
                        forcing: ForcingSpec | None = None, integrator: Integrator | None = None):
    """Smallest eigenvalues (ascending) and eigenvectors of -Lap + f'(z)."""
    integ = integrator or Integrator(z.domain, spec, forcing)
    J = jacobian(integ, z.coeffs)
    vals, vecs = np.linalg.eigh(J)
    if not np.all(np.isfinite(vals)):
        raise np.linalg.LinAlgError("eigensolver did not converge")
    # deterministic sign: largest-magnitude component positive
    for i in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, i]))
        if vecs[j, i] < 0:
            vecs[:, i] = -vecs[:, i]
    vecs = vecs / math.sqrt(z.domain.mode_norm2)  # unit L2 norm as fields
    if count is not None:
        vals, vecs = vals[:count], vecs[:, :count]
    return vals, vecs


def absorbing_radius(spec, forcing, domain) -> float:
    return decay_constants(spec, forcing, domain)[1]


def seed_guesses(domain: BoxDomain, seed_count: int, radius: float, modes: int = 4):
    """Low-mode sine seeds, both signs, amplitudes spanning (0, radius]."""
    ks = list(np.ndindex(*(min(modes, n) for n in domain.shape)))
    ks = sorted(ks, key=lambda k: (sum(i * i for i in k), k))[:domain.dim * modes]
    amps = radius * np.geomspace(0.05, 1.0, seed_count) if seed_count > 1 else [radius]
    yield np.zeros(domain.shape)
    for k in ks:
        for a in amps:
            scale = a / math.sqrt(domain.mode_norm2)
            for sign in (1.0, -1.0):
                c = np.zeros(domain.shape)
                c[k] = sign * scale
                yield c


def find_equilibria(spec: NonlinearitySpec, forcing: ForcingSpec | None = None,
                    domain: BoxDomain | None = None, seed_count: int = 6, modes: int = 4,
                    dedup: float = 1e-6, spectrum_count: int | None = 8) -> list[Equilibrium]:
    """Newton from seeded guesses, deduplicated by L2 distance.

    Sorted by (morse index, L2 norm, sign of the first coefficient)."""
    if seed_count < 1:
        raise ValueError("seed_count must be >= 1")
    domain = domain or forcing.domain
    integ = Integrator(domain, spec, forcing)
    radius = max(absorbing_radius(spec, integ.forcing, domain), 1.0)
    found: list[np.ndarray] = []
    residuals = []
    for guess in seed_guesses(domain, seed_count, radius, modes):
        out = newton(integ, guess)
        if out is None:
            log.debug("newton diverged from seed with norm %.3g", _l2_of_coeffs(domain, guess))
            continue
        a, rn = out
        if all(_l2_of_coeffs(domain, a - b) > dedup for b in found):
            found.append(a)
            residuals.append(rn)
    eqs = []
    for a, rn in zip(found, residuals):
        z = Field(domain, a)
        vals, vecs = linearized_spectrum(z, spec, None, integrator=integ)
        index = int(np.sum(vals < -1e-9))
        keep = len(vals) if spectrum_count is None else spectrum_count
        eqs.append(Equilibrium(z, rn, vals[:keep], index, vecs[:, :max(index, 1)]))
    eqs.sort(key=lambda e: (-e.morse_index, round(l2_norm(e.state), 9),
                            -float(np.sign(e.state.coeffs.flat[0]))))
    return eqs


# -- orbits ---------------------------------------------------------------

@dataclass
class LimitClassification:
    nearest: int
    distance: float
    speed: float
    converged: bool
    decided: bool


def distance_to_set(u: Field, states: list[Field]) -> tuple[int, float]:
    d = [l2_norm(u - s) for s in states]
    i = int(np.argmin(d))
    return i, float(d[i])


def forward_limit_check(traj: Trajectory, equilibria: list[Equilibrium],
                        tol: float = 1e-6) -> LimitClassification:
    """Nearest equilibrium to the final snapshot, with terminal speed."""
    states = [e.state for e in equilibria]
    i, d = distance_to_set(traj.final, states)
    if len(traj.states) > 1:
        speed = l2_norm(traj.states[-1] - traj.states[-2]) / (traj.times[-1] - traj.times[-2])
    else:
        speed = math.nan
    converged = d <= tol
    return LimitClassification(i, d, float(speed), converged, converged or speed <= tol)


def distance_history(traj: Trajectory, equilibria: list[Equilibrium]) -> np.ndarray:
    states = [e.state for e in equilibria]
    return np.array([distance_to_set(u, states)[1] for u in traj.states])


def unstable_manifold_shoot(z: Equilibrium, spec: NonlinearitySpec, forcing=None,
                            amplitude_grid=(1e-6,), horizon: float = 20.0, dt: float = 0.01,
                            snapshot_every: int = 1, equilibria=None,
                            tol: float = 1e-6) -> list[CompleteTrajectorySegment]:
    """Forward runs from z + a e for each unstable direction e and +-a."""
    if z.morse_index == 0:
        return []
    integ = Integrator(z.state.domain, spec, forcing)
    out = []
    for i, e in enumerate(z.unstable_directions()):
        for a in amplitude_grid:
            for sign in (1.0, -1.0):
                traj = simulate(z.state + (sign * a) * e, spec, integ.forcing, dt=dt,
                                horizon=horizon, snapshot_every=snapshot_every, integrator=integ)
                seg = CompleteTrajectorySegment(traj, z.state, i, sign * a)
                if equilibria:
                    c = forward_limit_check(traj, equilibria, tol)
                    seg.forward_limit = c.nearest if c.converged else None
                    seg.forward_distance = c.distance
                out.append(seg)
    return out


def escape_time(traj: Trajectory, center: Field, radius: float) -> float:
    """First snapshot time at which the orbit leaves the L2 ball."""
    for t, u in zip(traj.times, traj.states):
        if l2_norm(u - center) > radius:
            return float(t)
    return math.inf


# -- samples and set comparisons ---------------------------------------------

@dataclass
class AttractorSample:
    points: np.ndarray          # (count, *shape) sine coefficients
    provenance: list
    domain: BoxDomain

    def __len__(self):
        return len(self.points)

    def field(self, i: int) -> Field:
        return Field(self.domain, self.points[i])

    def vectors(self) -> np.ndarray:
        """Points as flat vectors in which Euclidean distance is the L2 distance."""
        return self.points.reshape(len(self.points), -1) * math.sqrt(self.domain.mode_norm2)

    def tree(self) -> cKDTree:
        return cKDTree(self.vectors())

    def linf_radius(self) -> float:
        return max(lp_norm(self.field(i), np.inf) for i in range(len(self)))

    def subsample(self, stride: int) -> "AttractorSample":
        keep = [i for i, p in enumerate(self.provenance) if p[0] == "equilibrium"
                or p[2] % stride == 0]
        return AttractorSample(self.points[keep], [self.provenance[i] for i in keep], self.domain)

    @classmethod
    def build(cls, equilibria, segments) -> "AttractorSample":
        pts, prov = [], []
        for i, e in enumerate(equilibria):
            pts.append(e.state.coeffs)
            prov.append(("equilibrium", i, 0))
        for j, seg in enumerate(segments):
            for n, u in enumerate(seg.trajectory.states):
                pts.append(u.coeffs)
                prov.append(("manifold-shoot", j, n))
        domain = equilibria[0].state.domain
        return cls(np.array(pts), prov, domain)


def nearest_distances(sample: AttractorSample, queries: np.ndarray) -> np.ndarray:
    q = queries.reshape(len(queries), -1) * math.sqrt(sample.domain.mode_norm2)
    return sample.tree().query(q)[0]


def forward_ensemble(spec, forcing, domain, seed: int, count: int, norm_range, horizon: float,
                     dt: float, snapshot_every: int = 1, stream: str = "forward",
                     modes: int | None = None) -> list[Trajectory]:
    trajs = []
    for i in range(count):
        rng = generator(seed, f"{stream}/{i}")
        lo, hi = norm_range
        target = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else lo
        u0 = random_field(domain, rng, l2=target, modes=modes)
        trajs.append(simulate(u0, spec, forcing, dt=dt, horizon=horizon,
                              snapshot_every=snapshot_every))
    return trajs


@dataclass
class StructureReport:
    equilibria: int
    morse_indices: list
    forward_mismatch: float                 # max dist forward snapshot -> sample
    refinement: list                        # (stride, mismatch) pairs
    manifold_unconverged: int
    manifold_max_terminal_distance: float
    forward_points: int
    sample_points: int
    connections: list                       # (from eq, to eq) per shoot
    inconclusive: bool = False
    notes: list = field(default_factory=list)


def structure_check(equilibria, segments, forward: list[Trajectory], t_transient: float,
                    strides=(4, 2, 1), tol: float = 1e-6, undecided_quota: float = 0.0
                    ) -> StructureReport:
    """Sampled containments forward-limit set <= unstable set and
    unstable set -> equilibria."""
    sample = AttractorSample.build(equilibria, segments)
    pts = []
    for traj in forward:
        idx = np.nonzero(traj.times >= t_transient - 1e-9)[0]
        pts.extend(traj.states[i].coeffs for i in idx)
    queries = np.array(pts)
    refinement = []
    for s in strides:
        d = nearest_distances(sample.subsample(s), queries) if len(queries) else np.zeros(1)
        refinement.append((int(s), float(d.max())))
    unconverged = [seg for seg in segments if seg.forward_limit is None]
    undecided = 0
    for traj in forward:
        c = forward_limit_check(traj, equilibria, tol)
        undecided += not c.decided
    inconclusive = undecided > undecided_quota * max(len(forward), 1)
    conns = [(0 if seg.backward_limit is None else _index_of(equilibria, seg.backward_limit),
              seg.forward_limit) for seg in segments]
    return StructureReport(
        equilibria=len(equilibria), morse_indices=[e.morse_index for e in equilibria],
        forward_mismatch=refinement[-1][1], refinement=refinement,
        manifold_unconverged=len(unconverged),
        manifold_max_terminal_distance=max((seg.forward_distance for seg in segments), default=0.0),
        forward_points=len(queries), sample_points=len(sample), connections=conns,
        inconclusive=bool(inconclusive))


def _index_of(equilibria, state: Field) -> int:
    return distance_to_set(state, [e.state for e in equilibria])[0]


def forward_invariance(sample: AttractorSample, spec, forcing, picks, t_check: float = 1.0,
                       dt: float = 0.01) -> float:
    """Max distance from the sample of sample points flowed for t_check."""
    ends = []
    integ = Integrator(sample.domain, spec, forcing)
    for i in picks:
        traj = simulate(sample.field(i), spec, forcing, dt=dt, horizon=t_check,
                        snapshot_every=int(round(t_check / dt)), integrator=integ)
        ends.append(traj.final.coeffs)
    return float(nearest_distances(sample, np.array(ends)).max())


# -- continuity on the attractor ---------------------------------------------

@dataclass
class LipschitzCheck:
    pairs: int
    violations: int
    worst_ratio: float    # max ||u-v||(t) / (||u0-v0|| e^(Lt))
    observed_rate: float  # max log(||u-v||(t)/||u0-v0||)/t
    unresolved: int = 0   # pairs closer than the rounding floor, not tested


def attractor_lipschitz_check(pairs, spec, forcing, L: float, t_grid, dt: float = 0.01,
                              slack: float = 1e-3, floor: float = 1e-10) -> LipschitzCheck:
    """Check ||u(t)-v(t)|| <= ||u0-v0|| e^(Lt) for each (u0, v0) pair.

    Pairs with ||u0-v0|| <= floor * max(1, ||u0||) are skipped: their
    difference is dominated by rounding in the time stepping.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    horizon = float(t_grid.max())
    integ = None
    violations, worst, rate, unresolved = 0, 0.0, -math.inf, 0
    for u0, v0 in pairs:
        d0 = l2_norm(u0 - v0)
        if d0 <= floor * max(1.0, l2_norm(u0)):
            unresolved += 1
            continue
        integ = integ or Integrator(u0.domain, spec, forcing)
        tu = simulate(u0, spec, forcing, dt=dt, horizon=horizon, snapshot_times=t_grid,
                      integrator=integ)
        tv = simulate(v0, spec, forcing, dt=dt, horizon=horizon, snapshot_times=t_grid,
                      integrator=integ)
        for t, a, b in zip(tu.times, tu.states, tv.states):
            d = l2_norm(a - b)
            bound = d0 * math.exp(L * t)
            if d > bound * (1 + slack):
                violations += 1
            worst = max(worst, d / bound)
            if t > 0 and d > 0:
                rate = max(rate, math.log(d / d0) / t)
    return LipschitzCheck(len(pairs), violations, worst, rate, unresolved)


@dataclass
class BranchingStats:
    scales: list
    max_divergence: list     # per scale, max over members and time
    required_rate: list      # per scale, max log(div/scale)/t
    envelope_L: float
    violations: list         # per scale, count of (member, t) beyond scale e^(Lt)


def branching_probe(u0: Field, spec, forcing=None, scales=(1e-4, 1e-5, 1e-6, 1e-7),
                    ensemble: int = 4, tau: float = 0.0, horizon: float = 1.0,
                    dt: float = 0.01, L: float | None = None, seed: int = 0,
                    slack: float = 1e-3) -> BranchingStats:
    """Restart from u(tau) with perturbations of each scale and track the
    divergence from the unperturbed continuation.

    With `L` unset, the envelope rate is the one required at the largest
    scale; a Lipschitz nonlinearity keeps every smaller scale inside it,
    a non-Lipschitz one does not.
    """
    integ = Integrator(u0.domain, spec, forcing)
    start = u0
    if tau > 0:
        start = simulate(u0, spec, forcing, dt=dt, horizon=tau, integrator=integ).final
    ref = simulate(start, spec, forcing, dt=dt, horizon=horizon, integrator=integ)
    divs, rates, curves = [], [], []
    for s in scales:
        worst, need, members = 0.0, -math.inf, []
        for i in range(ensemble):
            rng = generator(seed, f"branch/{s!r}/{i}")
            p = random_field(u0.domain, rng, l2=s, modes=4) if s > 0 else Field.zeros(u0.domain)
            run = simulate(start + p, spec, forcing, dt=dt, horizon=horizon, integrator=integ)
            d = np.array([l2_norm(a - b) for a, b in zip(run.states, ref.states)])
            members.append(d)
            worst = max(worst, float(d.max()))
            if s > 0:
                t = ref.times[1:]
                with np.errstate(divide="ignore"):
                    need = max(need, float(np.max(np.log(np.maximum(d[1:], 1e-300) / s) / t)))
        divs.append(worst)
        rates.append(need if s > 0 else 0.0)
        curves.append(members)
    envelope = L if L is not None else rates[0]
    violations = []
    for s, members in zip(scales, curves):
        bound = s * np.exp(envelope * ref.times)
        violations.append(int(sum(np.sum(d > bound * (1 + slack)) for d in members)))
    return BranchingStats(list(scales), divs, rates, float(envelope), violations)
