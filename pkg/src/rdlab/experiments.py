"""Experiment pipelines behind the CLI subcommands.

Each pipeline takes an ExperimentConfig and an optional output directory,
returns an Outcome (pass flag plus a JSON-ready report) and, when a
directory is given, writes the report, CSV tables, binary fields and
figures there.  Reports contain no timings or paths, so reruns with the
same config and seed are byte-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .attractor import (AttractorSample, attractor_lipschitz_check, distance_history,
                        find_equilibria, forward_ensemble, forward_invariance,
                        forward_limit_check, structure_check, unstable_manifold_shoot)
from .config import ExperimentConfig
from .dimension import (DimensionReport, box_counting, laplacian_spectrum, paper_constants,
                        project, search_bound)
from .fields import (BoxDomain, Field, big_phi, h1_seminorm, l2_norm, lp_norm, phi_km,
                     positive_part, save_field, to_bytes, truncate, write_csv)
from .ladder import (LadderSchedule, attractor_linf_radius, fit_envelope, linf_bound_check,
                     run_ladder, validate_envelope)
from .nonlinearity import (certify_dissipativity, certify_growth, certify_one_sided_lipschitz,
                           certify_two_sided_lipschitz)
from .reporting import write_json, write_rows
from .rng import generator, random_field
from .solver import l2_decay_check, simulate

log = logging.getLogger(__name__)

TAU_SWEEP = (0.25, 0.5, 1.0, 2.0)


@dataclass
class Outcome:
    command: str
    ok: bool
    report: dict
    files: list = field(default_factory=list)


class Infeasible(RuntimeError):
    """A pipeline cannot produce its report; carries a JSON diagnostic."""

    def __init__(self, command: str, diagnostic: dict):
        super().__init__(diagnostic.get("reason", command))
        self.command = command
        self.diagnostic = diagnostic


class Problem:
    """Domain, nonlinearity and forcing built once from a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.domain: BoxDomain = cfg.domain()
        self.spec = cfg.nonlinearity()
        self.forcing = cfg.forcing(self.domain)
        self.seed = cfg["seed"]


def _emit(out, name: str, report: dict, files: list) -> Path | None:
    if out is None:
        return None
    path = Path(out) / f"{name}.json"
    write_json(path, report)
    files.append(path.name)
    return path


def _outdir(out):
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    return out


def _eq_summary(eqs) -> list:
    return [{"index": i, "morse_index": e.morse_index, "l2": l2_norm(e.state),
             "linf": lp_norm(e.state, np.inf), "residual": e.residual,
             "spectrum": e.spectrum[:6]} for i, e in enumerate(eqs)]


# -- simulate ------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    u0 = random_field(pb.domain, generator(pb.seed, "initial"), l2=cfg["initial.l2"],
                      decay=cfg["initial.decay"])
    dt, horizon = cfg["solver.dt"], cfg["solver.horizon"]
    traj = simulate(u0, pb.spec, pb.forcing, dt=dt, horizon=horizon,
                    snapshot_every=max(1, int(round(horizon / dt))),
                    scheme=cfg["solver.scheme"], log_m=cfg["solver.log_m"])
    decay = l2_decay_check(traj, pb.spec, pb.forcing)
    u = traj.final
    report = {"command": "simulate", "config": cfg.resolved(),
              "initial": {"l2": l2_norm(u0), "linf": lp_norm(u0, np.inf)},
              "final": {"time": traj.times[-1], "l2": l2_norm(u), "linf": lp_norm(u, np.inf),
                        "h1": h1_seminorm(u)},
              "decay": decay, "steps": len(traj.log["time"]) - 1}
    if out is not None:
        traj.write_log_csv(Path(out) / "norms.csv")
        save_field(u, Path(out) / "final.bin")
        write_csv(u, Path(out) / "final.csv")
        plotting.norms(traj, Path(out) / "norms.png")
        files += ["norms.csv", "final.bin", "final.csv", "norms.png"]
    _emit(out, "simulate", report, files)
    return Outcome("simulate", decay.violations == 0, report, files)


# -- equilibria and attractor ------------------------------------------------

def equilibria(pb: Problem):
    return find_equilibria(pb.spec, pb.forcing, pb.domain, seed_count=pb.cfg["attractor.seed_count"],
                           modes=pb.cfg["attractor.modes"])


def run_equilibria(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    eqs = equilibria(pb)
    report = {"command": "equilibria", "config": cfg.resolved(), "count": len(eqs),
              "equilibria": _eq_summary(eqs)}
    if out is not None:
        for i, e in enumerate(eqs):
            save_field(e.state, Path(out) / f"equilibrium_{i:03d}.bin")
            files.append(f"equilibrium_{i:03d}.bin")
        plotting.profiles([e.state for e in eqs],
                          [f"#{i} index {e.morse_index}" for i, e in enumerate(eqs)],
                          Path(out) / "equilibria.png")
        files.append("equilibria.png")
    _emit(out, "equilibria", report, files)
    ok = all(e.residual <= 1e-10 for e in eqs) and len(eqs) > 0
    return Outcome("equilibria", ok, report, files)


def shoot_all(pb: Problem, eqs) -> list:
    cfg = pb.cfg
    segs = []
    for z in eqs:
        if 1 <= z.morse_index <= 2:
            segs += unstable_manifold_shoot(z, pb.spec, pb.forcing,
                                            amplitude_grid=cfg["attractor.amplitudes"],
                                            horizon=cfg["attractor.shoot_horizon"],
                                            dt=cfg["attractor.shoot_dt"], equilibria=eqs,
                                            tol=cfg["attractor.tol"])
    return segs


def build_attractor(pb: Problem):
    eqs = equilibria(pb)
    segs = shoot_all(pb, eqs)
    return eqs, segs, AttractorSample.build(eqs, segs)


def attractor_lipschitz(pb: Problem, sample: AttractorSample):
    """(R, L) with R the sampled sup-norm radius and L = L(R) two-sided."""
    R = attractor_linf_radius(sample)
    est = certify_two_sided_lipschitz(pb.spec, max(R, 1e-9))
    return R, est


def _connections(eqs, segs) -> list:
    states = [e.state for e in eqs]
    out = []
    for seg in segs:
        src = int(np.argmin([l2_norm(seg.backward_limit - s) for s in states]))
        out.append({"from": src, "direction": seg.direction, "amplitude": seg.amplitude,
                    "to": seg.forward_limit, "terminal_distance": seg.forward_distance})
    return out


def attractor_pairs(sample: AttractorSample, count: int, rng, floor: float = 1e-8) -> list:
    """Random distinct sample pairs; near-duplicates (the sample dwells
    near equilibria) are redrawn so every pair is resolvable."""
    n, pairs = len(sample), []
    for _ in range(100 * count):
        if n < 2 or len(pairs) == count:
            break
        i, j = rng.choice(n, size=2, replace=False)
        u, v = sample.field(int(i)), sample.field(int(j))
        if l2_norm(u - v) > floor * max(1.0, l2_norm(u)):
            pairs.append((u, v))
    return pairs


def run_attractor(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    eqs, segs, sample = build_attractor(pb)
    R, est = attractor_lipschitz(pb, sample)
    rng = generator(pb.seed, "attractor/pairs")
    n = len(sample)
    pairs = attractor_pairs(sample, cfg["attractor.pairs"], rng)
    lip = attractor_lipschitz_check(pairs, pb.spec, pb.forcing, est.value,
                                    cfg["attractor.pair_times"], dt=cfg["attractor.forward_dt"])
    picks = sorted(int(i) for i in rng.choice(n, size=min(n, cfg["attractor.invariance_checks"]),
                                              replace=False))
    inv = forward_invariance(sample, pb.spec, pb.forcing, picks, t_check=1.0,
                             dt=cfg["attractor.shoot_dt"])
    report = {"command": "attractor", "config": cfg.resolved(),
              "equilibria": _eq_summary(eqs), "connections": _connections(eqs, segs),
              "sample_points": n, "linf_radius": R,
              "lipschitz": {"R": R, "L": est.value, "closed_form": est.closed_form,
                            "diverging": est.diverging},
              "pair_check": lip, "invariance_distance": inv}
    if out is not None:
        blob = b"".join(to_bytes(sample.field(i)) for i in range(n))
        (Path(out) / "sample.bin").write_bytes(blob)
        write_rows(Path(out) / "sample_provenance.csv", ["point", "kind", "source", "step"],
                   [(i, *p) for i, p in enumerate(sample.provenance)])
        plotting.sample_projection(project(sample, 2), [p[0] for p in sample.provenance],
                                   Path(out) / "attractor.png")
        files += ["sample.bin", "sample_provenance.csv", "attractor.png"]
    _emit(out, "attractor", report, files)
    ok = (lip.violations == 0 and lip.unresolved == 0 and len(pairs) == cfg["attractor.pairs"]
          and all(s.forward_limit is not None for s in segs))
    return Outcome("attractor", ok, report, files)


def run_structure(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    eqs, segs, sample = build_attractor(pb)
    fw = forward_ensemble(pb.spec, pb.forcing, pb.domain, pb.seed, cfg["attractor.forward_count"],
                          (cfg["attractor.forward_norm_min"], cfg["attractor.forward_norm_max"]),
                          cfg["attractor.forward_horizon"], cfg["attractor.forward_dt"],
                          stream="structure/forward")
    rep = structure_check(eqs, segs, fw, cfg["attractor.transient"], tol=cfg["attractor.tol"])
    limits = [forward_limit_check(tr, eqs, cfg["attractor.tol"]) for tr in fw]
    histories = [distance_history(tr, eqs) for tr in fw]
    report = {"command": "structure", "config": cfg.resolved(), "equilibria": _eq_summary(eqs),
              "connections": _connections(eqs, segs), "structure": rep,
              "forward_limits": limits}
    if out is not None:
        plotting.distance_histories([tr.times for tr in fw], histories,
                                    Path(out) / "structure.png")
        files.append("structure.png")
    _emit(out, "structure", report, files)
    ok = (not rep.inconclusive and rep.manifold_unconverged == 0
          and all(c.converged for c in limits))
    return Outcome("structure", ok, report, files)


# -- ladder --------------------------------------------------------------------

def ladder_ensembles(pb: Problem):
    cfg = pb.cfg
    rng = (cfg["ensemble.norm_min"], cfg["ensemble.norm_max"])
    args = (pb.spec, pb.forcing, pb.domain, pb.seed)
    train = forward_ensemble(*args, cfg["ensemble.size"], rng, cfg["ensemble.horizon"],
                             cfg["ensemble.dt"], stream="ensemble/train")
    held = forward_ensemble(*args, cfg["ensemble.heldout"], rng, cfg["ensemble.horizon"],
                            cfg["ensemble.dt"], stream="ensemble/heldout")
    return train, held


def schedule_for(cfg: ExperimentConfig, dim: int) -> LadderSchedule:
    return LadderSchedule.for_dimension(dim, m0=cfg["ladder.m0"], m_max=cfg["ladder.m_max"],
                                        delta=cfg["ladder.delta"], D_exp=cfg["ladder.d_exp"])


def saturation(trajs, m: float, t_from: float) -> float:
    """Smallest ||u||_m / ||u||_inf over snapshots at t >= t_from."""
    worst = math.inf
    for tr in trajs:
        for t, u in zip(tr.times, tr.states):
            top = lp_norm(u, np.inf)
            if t >= t_from - 1e-12 and top > 0:
                worst = min(worst, lp_norm(u, m) / top)
    return worst


def run_ladder_cmd(cfg: ExperimentConfig, out=None, tau: float | None = None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    tau = cfg["ladder.tau"] if tau is None else tau
    sched = schedule_for(cfg, pb.domain.dim)
    train, held = ladder_ensembles(pb)
    horizon = cfg["ensemble.horizon"]
    t1s = [t for t in cfg["ladder.t1"] if t + sched.total_wait <= horizon + 1e-9]
    floor = cfg["ladder.floor"]
    train_rungs = [r for tr in train for t1 in t1s
                   for r in run_ladder(tr, t1, sched, floor=floor).rungs]
    K = fit_envelope(train_rungs)
    held_reports = [run_ladder(tr, t1, sched, K=K, floor=floor) for tr in held for t1 in t1s]
    held_rungs = [r for rep in held_reports for r in rep.rungs]
    violations = validate_envelope(held_rungs, K, sched.D_exp)
    fit = linf_bound_check(train, 0.0, tau)
    # the quotient approaches its supremum only to ~1e-8 along runs
    held_fit = linf_bound_check(held, 0.0, tau, D=fit.D_hat, rtol=1e-6)
    sweep = {str(s): linf_bound_check(train, 0.0, s).D_hat for s in sorted({*TAU_SWEEP, tau})}
    decay = [l2_decay_check(tr, pb.spec, pb.forcing) for tr in train + held]
    sat = saturation(train, sched.m_max, 1.0)
    report = {
        "command": "ladder", "config": cfg.resolved(), "tau": tau,
        "schedule": {"A": sched.A, "m0": sched.m0, "m_max": sched.m_max, "delta": sched.delta,
                     "D_exp": sched.D_exp, "rungs": sched.rungs, "waits": sched.waits,
                     "total_wait": sched.total_wait, "wait_bound": sched.wait_bound},
        "t1": t1s, "envelope_K": K, "product_bound": sched.product_bound(K) if K > 0 else 0.0,
        "max_quotient": max((r.quotient for r in train_rungs), default=0.0),
        "heldout_violations": violations,
        "heldout_max_quotient_product": max((r.quotient_product for r in held_reports),
                                            default=0.0),
        "linf_fit": {"D_hat": fit.D_hat, "split": fit.split, "prefix": fit.prefix_fits,
                     "heldout_violations": held_fit.violations},
        "tau_sweep": sweep,
        "saturation_min": sat,
        "decay_violations": int(sum(d.violations for d in decay)),
        "decay_constants": {"rate": decay[0].alpha, "K": decay[0].K} if decay else {},
        "terminal": [{"t1": rep.t1, "norm": rep.terminal_norm, "linf": rep.terminal_linf}
                     for rep in held_reports[:len(t1s)]],
    }
    if out is not None:
        rows = [(i, r.t1, r.m, r.tau, r.window_sup, r.lhs, r.quotient, r.implied)
                for i, rep in enumerate(held_reports) for r in rep.rungs]
        write_rows(Path(out) / "rungs.csv",
                   ["report", "t1", "m", "tau", "window_sup", "lhs", "quotient", "implied"], rows)
        plotting.rung_quotients([r.m for r in train_rungs], [r.quotient for r in train_rungs],
                                lambda m: (K * m**sched.D_exp) ** (1 / m),
                                Path(out) / "ladder.png")
        files += ["rungs.csv", "ladder.png"]
    _emit(out, "ladder", report, files)
    # held-out D exceedances are reported only: D_hat is an ensemble maximum, not a bound
    ratio = fit.split.get("ratio", 1.0)
    ok = (not violations and math.isfinite(fit.D_hat) and ratio <= 2.0
          and report["decay_violations"] == 0)
    return Outcome("ladder", ok, report, files)


# -- dimension -------------------------------------------------------------------

def dimension_report(pb: Problem, sample: AttractorSample) -> DimensionReport:
    cfg = pb.cfg
    R, est = attractor_lipschitz(pb, sample)
    L = est.value
    if not math.isfinite(L):
        raise Infeasible("dimension", {"reason": "Lipschitz constant diverges at the attractor "
                                                 "radius", "R": R, "estimate": est.estimate})
    count = cfg["dimension.spectrum_count"]
    spectrum = laplacian_spectrum(pb.domain, count)
    # the explicit route may need more eigenvalues than the search scans
    route = paper_constants(L, pb.domain.dim, spectrum.D_asym, cfg["dimension.alpha_slack"])
    if route.N + 1 > count:
        spectrum = laplacian_spectrum(pb.domain, route.N + 1)
    grid = np.geomspace(cfg["dimension.t_min"], cfg["dimension.t_max"], cfg["dimension.t_count"])
    search = search_bound(L, spectrum, grid, cfg["dimension.n_max"] or count - 1)
    paper = paper_constants(L, pb.domain.dim, spectrum.D_asym, cfg["dimension.alpha_slack"],
                            spectrum)
    bc = box_counting(sample, cfg["dimension.projection_modes"])
    return DimensionReport(L, R, search, paper, bc, list(spectrum.eigenvalues[:10]),
                           spectrum.D_asym)


def run_dimension(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    eqs, segs, sample = build_attractor(pb)
    rep = dimension_report(pb, sample)
    report = {"command": "dimension", "config": cfg.resolved(), "sample_points": len(sample),
              "equilibria": len(eqs), "report": rep, "consistent": rep.consistent()}
    if not rep.search.feasible:
        report["diagnostic"] = rep.search.binding
    if out is not None:
        bc = rep.box_counting
        plotting.box_counts(bc.eps, bc.counts, bc.window, bc.slope, Path(out) / "box_counting.png")
        spectrum = laplacian_spectrum(pb.domain, 16)
        plotting.dimension_search(rep.L, spectrum, Path(out) / "delta.png")
        files += ["box_counting.png", "delta.png"]
    _emit(out, "dimension", report, files)
    ok = rep.search.feasible and rep.paper.satisfied and rep.consistent()
    return Outcome("dimension", ok, report, files)


# -- check ----------------------------------------------------------------------

def _check_sandwich(pb: Problem, count: int):
    worst = 0.0
    for i in range(count):
        rng = generator(pb.seed, f"check/field/{i}")
        u = positive_part(random_field(pb.domain, rng, l2=float(np.exp(rng.uniform(-2, 2)))))
        for m in (1, 2, 4, 8):
            full = lp_norm(u, 2 * m) ** (2 * m) / (2 * m)
            for k in (0.1, 1.0, 10.0):
                low = lp_norm(truncate(u, k), 2 * m) ** (2 * m) / (2 * m)
                mid = big_phi(u, k, m)
                scale = max(full, 1e-300)
                worst = max(worst, (low - mid) / scale, (mid - full) / scale)
    return worst <= 1e-10, {"worst_relative_excess": worst}


def _check_truncate(pb: Problem, count: int):
    ok = True
    for i in range(count):
        u = random_field(pb.domain, generator(pb.seed, f"check/trunc/{i}"), l2=2.0)
        t1 = truncate(u, 0.5)
        ok &= bool(np.array_equal(truncate(t1, 0.5).nodal, t1.nodal))
    return ok, {}


def _check_phi(pb: Problem, count: int):
    s = np.linspace(0, 5, 2001)
    worst = 0.0
    for k in (0.1, 1.0, 2.5):
        for m in (1, 1.5, 3):
            v = phi_km(s, k, m)
            worst = min(worst, float(np.min(np.diff(v, 2)) / max(1.0, np.abs(v).max())),
                        float(np.min(np.diff(v))))
    return worst >= -1e-12, {"worst": worst}


def _check_roundtrip(pb: Problem, count: int):
    worst = 0.0
    for i in range(count):
        u = random_field(pb.domain, generator(pb.seed, f"check/roundtrip/{i}"))
        back = Field.from_nodal(pb.domain, u.nodal)
        worst = max(worst, float(np.abs(back.coeffs - u.coeffs).max() / np.abs(u.coeffs).max()))
    return worst <= 1e-12, {"worst_relative": worst}


def _check_hypotheses(pb: Problem, count: int):
    g = certify_growth(pb.spec)
    d = certify_dissipativity(pb.spec)
    rs = [0.5, 1.0, 2.0]
    one = [certify_one_sided_lipschitz(pb.spec, r).value for r in rs]
    two = [certify_two_sided_lipschitz(pb.spec, r).value for r in rs]
    # sampled quotients undershoot by O(grid spacing), which grows with R
    rtol = 1e-6
    mono = all(a <= b * (1 + rtol) for a, b in zip(two, two[1:]))
    implied = all(o <= t * (1 + rtol) for o, t in zip(one, two))
    return g.passed and d.passed and mono and implied, {
        "growth": g, "dissipativity": d, "one_sided": one, "two_sided": two}


def _check_decay(pb: Problem, count: int):
    u0 = random_field(pb.domain, generator(pb.seed, "check/decay"), l2=50.0)
    traj = simulate(u0, pb.spec, pb.forcing, dt=0.01, horizon=2.0, snapshot_every=100)
    dc = l2_decay_check(traj, pb.spec, pb.forcing)
    return dc.violations == 0, {"decay": dc}


def _check_semiflow(pb: Problem, count: int):
    u0 = random_field(pb.domain, generator(pb.seed, "check/semiflow"), l2=3.0)
    whole = simulate(u0, pb.spec, pb.forcing, dt=0.01, horizon=1.0, snapshot_every=100).final
    half = simulate(u0, pb.spec, pb.forcing, dt=0.01, horizon=0.5, snapshot_every=50).final
    split = simulate(half, pb.spec, pb.forcing, dt=0.01, horizon=0.5, snapshot_every=50).final
    err = l2_norm(whole - split) / max(l2_norm(whole), 1e-300)
    return err <= 1e-9, {"relative_gap": err}


def _check_fixed_points(pb: Problem, count: int):
    worst = 0.0
    for e in equilibria(pb):
        end = simulate(e.state, pb.spec, pb.forcing, dt=0.01, horizon=1.0,
                       snapshot_every=100).final
        worst = max(worst, l2_norm(end - e.state))
    return worst <= 1e-9, {"worst_drift": worst}


def _check_dimension_routes(pb: Problem, count: int):
    from .dimension import abstract_bound
    rng = generator(pb.seed, "check/dimension")
    worst = 0.0
    for _ in range(count):
        l = float(np.exp(rng.uniform(0, 3)))
        delta = float(rng.uniform(1e-6, 0.7))
        N = int(rng.integers(1, 50))
        ab = abstract_bound(l, delta, N)
        worst = max(worst, abs(ab.eta - ab.eta_closed) / max(1.0, ab.eta_closed))
    sched = schedule_for(pb.cfg, pb.domain.dim)
    return worst <= 1e-12 and sched.total_wait <= sched.wait_bound, {
        "worst_eta_gap": worst, "total_wait": sched.total_wait, "wait_bound": sched.wait_bound}


CHECKS = [
    ("truncation sandwich", _check_sandwich),
    ("truncation idempotent", _check_truncate),
    ("phi convex and nondecreasing", _check_phi),
    ("spectral round trip", _check_roundtrip),
    ("structural hypotheses", _check_hypotheses),
    ("l2 decay inequality", _check_decay),
    ("semiflow concatenation", _check_semiflow),
    ("equilibria are fixed points", _check_fixed_points),
    ("dimension bound routes agree", _check_dimension_routes),
]


def run_check(cfg: ExperimentConfig, out=None) -> Outcome:
    pb, out, files = Problem(cfg), _outdir(out), []
    count = cfg["check.fields"]
    results = []
    for name, fn in CHECKS:
        ok, detail = fn(pb, count)
        results.append({"name": name, "passed": bool(ok), "detail": detail})
    report = {"command": "check", "config": cfg.resolved(), "results": results}
    _emit(out, "check", report, files)
    return Outcome("check", all(r["passed"] for r in results), report, files)


COMMANDS = {
    "simulate": run_simulate,
    "equilibria": run_equilibria,
    "attractor": run_attractor,
    "structure": run_structure,
    "ladder": run_ladder_cmd,
    "dimension": run_dimension,
    "check": run_check,
}
