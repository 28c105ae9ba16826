"""Empirical side of the Moser-Alikakos iteration.

Each rung raises control of ||u+||_m over a short window to control of
||u+||_{Am} at the window's end.  The constants in the rung inequality
are existential, so they are fitted: the implied constant of a rung is
K_m = q^m / m^D with q the floored quotient of the two norms, and a
single envelope K_hat = max K_m is re-validated on held-out runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import big_phi, lp_norm, positive_part, truncate
from .reporting import dumps
from .solver import Trajectory


def rung_ratio(d: int) -> float:
    """Exponent ratio A between consecutive rungs."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    return 2.0 if d <= 3 else d / (d - 2)


@dataclass(frozen=True)
class LadderSchedule:
    A: float = 2.0
    m0: float = 2.0
    m_max: float = 64.0
    delta: float = 0.5
    D_exp: float = 1.0

    def __post_init__(self):
        if not self.A > 1:
            raise ValueError(f"rung ratio must exceed 1, got {self.A}")
        if self.m0 < 1 or self.m_max < self.A * self.m0:
            raise ValueError("need 1 <= m0 and A*m0 <= m_max")
        if not (self.delta > 0 and self.D_exp > 0):
            raise ValueError("delta and D_exp must be positive")

    @classmethod
    def for_dimension(cls, d: int, **kw) -> "LadderSchedule":
        return cls(A=rung_ratio(d), **kw)

    @property
    def rungs(self) -> list[float]:
        """Exponents m_j = m0 A^j whose target A m_j stays within m_max."""
        out, m = [], self.m0
        while self.A * m <= self.m_max * (1 + 1e-12):
            out.append(m)
            m *= self.A
        return out

    @property
    def waits(self) -> list[float]:
        return [self.delta / m**self.D_exp for m in self.rungs]

    @property
    def starts(self) -> list[float]:
        """Offsets of each rung window from t1."""
        return list(np.concatenate([[0.0], np.cumsum(self.waits)[:-1]]))

    @property
    def total_wait(self) -> float:
        return float(sum(self.waits))

    @property
    def wait_bound(self) -> float:
        """Sum of the infinite geometric schedule."""
        a = self.A**self.D_exp
        return self.delta * a / (self.m0**self.D_exp * (a - 1))

    def product_bound(self, K: float) -> float:
        """Closed form of prod_j (K m_j^D)^(1/m_j) over the infinite schedule."""
        A, m, D = self.A, self.m0, self.D_exp
        return (K ** ((1 / m) * A / (A - 1)) * m ** ((D / m) * A / (A - 1))
                * A ** ((D / m) * A / (A - 1) ** 2))


@dataclass
class RungRecord:
    m: float
    A: float
    t1: float
    tau: float
    window_sup: float      # sup over window snapshots of ||u+||_m
    lhs: float             # ||u+(t1+tau)||_{Am}
    quotient: float        # max(lhs, floor) / max(window_sup, floor)
    implied: float         # quotient^m / m^D_exp
    floor: float
    k_grid: list = field(default_factory=list)
    truncated_lhs: list = field(default_factory=list)   # ||T_k u+(t2)||_{2m}^{2m}
    truncated_phi: list = field(default_factory=list)   # 2m Phi_{k,m}(u+(t1))
    untruncated_lhs: float = 0.0                        # ||u+(t2)||_{2m}^{2m}
    untruncated_phi: float = 0.0                        # ||u+(t1)||_{2m}^{2m}
    rhs_sup: list = field(default_factory=list)         # sup ||u+||_m^{2m}, one per k
    monotone_in_k: bool = True

    def envelope(self, K: float, D_exp: float = 1.0) -> float:
        return (K * self.m**D_exp) ** (1 / self.m)


def _window_states(traj: Trajectory, t0: float, t1: float):
    idx = traj.window(t0, t1)
    if len(idx) == 0 or abs(traj.times[idx[0]] - t0) > 1e-9 * max(1, t0) \
            or abs(traj.times[idx[-1]] - t1) > 1e-9 * max(1, t1):
        raise ValueError(f"trajectory snapshots do not cover the window [{t0}, {t1}]")
    return [traj.states[i] for i in idx]


def rung_check(traj: Trajectory, t1: float, tau: float, m: float, A: float, k_grid=None,
               floor: float = 1.0, D_exp: float = 1.0) -> RungRecord:
    """Evaluate one rung on the snapshots in [t1, t1 + tau].

    `k_grid` defaults to {1/2, 1, 2, 4} times the nodal max of u+ over the
    window.  For each level the truncated norm at the window end and the
    potential at its start are recorded next to their untruncated limits.
    """
    if m < 1:
        raise ValueError(f"rung exponent must be >= 1, got {m}")
    if not tau > 0:
        raise ValueError(f"rung wait must be positive, got {tau}")
    states = [positive_part(u) for u in _window_states(traj, t1, t1 + tau)]
    first, last = states[0], states[-1]
    window_sup = max(lp_norm(u, m) for u in states)
    lhs = lp_norm(last, A * m)
    q = max(lhs, floor) / max(window_sup, floor) if floor > 0 else (
        lhs / window_sup if window_sup > 0 else (0.0 if lhs == 0 else math.inf))
    top = max(lp_norm(u, np.inf) for u in states)
    if k_grid is None:
        k_grid = [f * top for f in (0.5, 1.0, 2.0, 4.0)] if top > 0 else [0.5, 1.0, 2.0, 4.0]
    k_grid = sorted(float(k) for k in k_grid)
    p = 2 * m
    rec = RungRecord(m=m, A=A, t1=t1, tau=tau, window_sup=window_sup, lhs=lhs, quotient=q,
                     implied=q**m / m**D_exp, floor=floor, k_grid=k_grid)
    rec.untruncated_lhs = lp_norm(last, p) ** p
    rec.untruncated_phi = lp_norm(first, p) ** p
    sup_pow = window_sup**p
    for k in k_grid:
        rec.truncated_lhs.append(lp_norm(truncate(last, k), p) ** p)
        rec.truncated_phi.append(p * big_phi(first, k, m))
        rec.rhs_sup.append(sup_pow)
    rec.monotone_in_k = bool(np.all(np.diff(rec.truncated_lhs) >= -1e-12 * (1 + sup_pow))
                             and np.all(np.diff(rec.truncated_phi) >= -1e-12 * (1 + sup_pow)))
    return rec


@dataclass
class LadderReport:
    schedule: LadderSchedule
    t1: float
    rungs: list
    quotient_product: float
    envelope_K: float | None = None
    envelope_product: float | None = None     # finite product of rung envelopes
    product_bound: float | None = None        # closed-form infinite product
    terminal_time: float = 0.0
    terminal_norm: float = 0.0                # ||u(t_end)||_{m_max}
    terminal_linf: float = 0.0
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schedule"] = {**asdict(self.schedule), "rungs": self.schedule.rungs,
                           "waits": self.schedule.waits, "total_wait": self.schedule.total_wait,
                           "wait_bound": self.schedule.wait_bound}
        return out


def run_ladder(traj: Trajectory, t1: float, schedule: LadderSchedule, K: float | None = None,
               floor: float = 1.0, k_grid=None) -> LadderReport:
    """Rung checks at cumulative times t1 + sum of earlier waits."""
    end = t1 + schedule.total_wait
    if traj.times[-1] < end - 1e-9:
        raise ValueError(f"trajectory ends at {traj.times[-1]}, ladder needs {end}")
    rungs = [rung_check(traj, t1 + s, w, m, schedule.A, k_grid, floor, schedule.D_exp)
             for m, w, s in zip(schedule.rungs, schedule.waits, schedule.starts)]
    final = traj.at(end)
    rep = LadderReport(schedule, t1, rungs, float(np.prod([r.quotient for r in rungs])),
                       terminal_time=end, terminal_norm=lp_norm(final, schedule.m_max),
                       terminal_linf=lp_norm(final, np.inf))
    if K is not None:
        rep.envelope_K = K
        rep.envelope_product = float(np.prod([r.envelope(K, schedule.D_exp) for r in rungs]))
        rep.product_bound = schedule.product_bound(K)
        rep.violations = validate_envelope(rungs, K, schedule.D_exp)
    return rep


def fit_envelope(records) -> float:
    """Smallest K with q <= (K m^D)^(1/m) on every record."""
    return max((r.implied for r in records), default=0.0)


def validate_envelope(records, K: float, D_exp: float = 1.0, rtol: float = 1e-9) -> list:
    """Records whose quotient exceeds the envelope, as (m, t1, q, bound)."""
    out = []
    for r in records:
        bound = r.envelope(K, D_exp)
        if r.quotient > bound * (1 + rtol):
            out.append((r.m, r.t1, r.quotient, bound))
    return out


def ladder_json(reports, K: float, extra: dict | None = None) -> str:
    return dumps({"envelope_K": K, "reports": [r.to_dict() for r in reports], **(extra or {})})


# -- uniform L-infinity bound ------------------------------------------------

def _revcummax(x: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(x[::-1])[::-1]


def linf_quotient(traj: Trajectory, t1: float, tau: float) -> float:
    """max over t1' >= t1 and t >= t1' + tau of
    ||u(t)||_inf / (sup_{s >= t1'} ||u(s)||_2 + 1), from the per-step log.

    Sliding t1' is legitimate because the bound holds from any start time.
    """
    t = traj.log["time"]
    linf_tail = _revcummax(traj.log["linf"])
    l2_tail = _revcummax(traj.log["l2"])
    starts = np.nonzero(t >= t1 - 1e-12)[0]
    later = np.searchsorted(t, t[starts] + tau - 1e-9)
    ok = later < len(t)
    if not np.any(ok):
        raise ValueError(f"trajectory too short for t1={t1}, tau={tau}")
    return float(np.max(linf_tail[later[ok]] / (l2_tail[starts[ok]] + 1.0)))


@dataclass
class LinfFit:
    t1: float
    tau: float
    D_hat: float
    quotients: list
    prefix_fits: list         # D_hat over the first k runs, k = 1..n
    split: dict               # refits on small / large initial data
    violations: int = 0       # held-out runs above a supplied D


def linf_bound_check(trajs, t1: float, tau: float, D: float | None = None,
                     rtol: float = 1e-9) -> LinfFit:
    """Fit D(tau) over an ensemble; with `D` given, count runs exceeding it."""
    qs = [linf_quotient(tr, t1, tau) for tr in trajs]
    prefix = list(np.maximum.accumulate(qs)) if qs else []
    norms = np.array([tr.log["l2"][0] for tr in trajs])
    split = {}
    if len(trajs) >= 2:
        order = np.argsort(norms, kind="stable")
        half = len(order) // 2
        small = max(qs[i] for i in order[:half])
        large = max(qs[i] for i in order[half:])
        split = {"small": small, "large": large,
                 "ratio": max(small, large) / min(small, large) if min(small, large) > 0
                 else (1.0 if small == large else math.inf)}
    D_hat = max(qs, default=0.0)
    bad = 0 if D is None else sum(q > D * (1 + rtol) for q in qs)
    return LinfFit(t1, tau, D_hat, qs, [float(v) for v in prefix], split, int(bad))


def attractor_linf_radius(sample) -> float:
    """Largest nodal sup-norm over an attractor sample or a list of fields."""
    if hasattr(sample, "linf_radius"):
        if len(sample) == 0:
            raise ValueError("empty attractor sample")
        return sample.linf_radius()
    fields = list(sample)
    if not fields:
        raise ValueError("empty attractor sample")
    return max(lp_norm(u, np.inf) for u in fields)
