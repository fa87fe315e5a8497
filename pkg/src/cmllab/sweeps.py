"""Parameter sweeps over the coupling strength.

A sweep runs ``seeds_per_c`` orbits at every c of a grid and scores each
run with a predicate: :class:`SyncWithin` (sustained synchronization) or
:class:`IntermittencyScore` (repeated approach to and escape from the
diagonal). Every c uses the same list of seeds, so neighbouring grid points
are compared on common initial conditions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import BracketError, ConfigError, EscapeError
from .maps import LatticeSystem
from .orbit import OrbitConfig, OrbitStats, initial_state, run_orbit


@dataclass(frozen=True)
class SyncWithin:
    """dist <= tol for ``sustain`` consecutive steps within the horizon."""

    tol: float = 1e-9
    horizon: int = 1_000_000
    sustain: int = 1000
    name: str = "sync"

    def configure(self, cfg: OrbitConfig) -> OrbitConfig:
        # the predicate is settled once synchronization is sustained
        return replace(cfg, n_steps=int(self.horizon), sync_tol=self.tol, sync_sustain=self.sustain,
                       burn_in=min(cfg.burn_in, int(self.horizon) - 1), stop_on_sync=True)

    def holds(self, st: OrbitStats) -> bool:
        return st.sustained_sync_time is not None


@dataclass(frozen=True)
class IntermittencyScore:
    """min dist below ``min_below``, max dist above ``max_above`` and at least
    ``min_alternations`` ORDER/DISORDER switches with thresholds (eps, gamma)."""

    eps: float = 1e-6
    gamma: float = 1e-3
    min_below: float = 1e-4
    max_above: float = 2.0 ** -20
    min_alternations: int = 1
    name: str = "intermittency"

    def configure(self, cfg: OrbitConfig) -> OrbitConfig:
        return replace(cfg, eps=self.eps, gamma=self.gamma)

    def holds(self, st: OrbitStats) -> bool:
        return (st.min_dist_after_burn_in < self.min_below
                and st.max_dist_after_burn_in > self.max_above
                and st.alternations >= self.min_alternations)


Predicate = Union[SyncWithin, IntermittencyScore]


def c_grid(lo: float, hi: float, step: float) -> List[float]:
    """Inclusive grid lo, lo+step, ... <= hi, rounded to 12 decimals."""
    if not step > 0 or hi < lo:
        raise ConfigError("grid needs step > 0 and hi >= lo")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [round(lo + k * step, 12) for k in range(n + 1)]


def seed_list(master_seed: int, n: int) -> List[int]:
    """``n`` 64-bit run seeds derived from a master seed."""
    ss = np.random.SeedSequence(int(master_seed))
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


@dataclass
class SweepSpec:
    c_values: List[float]
    seeds_per_c: int = 16
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    predicate: Predicate = field(default_factory=SyncWithin)
    master_seed: int = 0
    trace_samples: int = 0

    def __post_init__(self):
        self.c_values = [float(c) for c in self.c_values]
        if not self.c_values:
            raise ConfigError("sweep needs at least one c value")
        if any(not 0.0 <= c <= 1.0 for c in self.c_values):
            raise ConfigError("sweep c values must lie in [0, 1]")
        if int(self.seeds_per_c) < 1:
            raise ConfigError("seeds_per_c must be >= 1")
        self.seeds_per_c = int(self.seeds_per_c)

    @classmethod
    def from_grid(cls, lo, hi, step, **kw) -> "SweepSpec":
        return cls(c_grid(lo, hi, step), **kw)

    @property
    def seeds(self) -> List[int]:
        return seed_list(self.master_seed, self.seeds_per_c)

    def run_config(self) -> OrbitConfig:
        cfg = self.predicate.configure(self.orbit)
        if self.trace_samples > 0:
            cfg = replace(cfg, trace_stride=max(1, cfg.n_steps // self.trace_samples))
        return cfg


@dataclass
class RunRow:
    c: float
    seed: int
    sync_time: Optional[int]
    min_dist: float
    max_dist: float
    alternations: int
    holds: bool
    error: Optional[str] = None
    samples: Optional[list] = field(default=None, repr=False)

    def record(self) -> dict:
        return {"c": self.c, "seed": self.seed, "sync_time": self.sync_time,
                "min_dist": self.min_dist, "max_dist": self.max_dist,
                "alternations": self.alternations}


@dataclass
class CRow:
    c: float
    sync_fraction: float
    mean_alternations: float
    mean_min_dist: float
    mean_max_dist: float
    n_runs: int
    n_escapes: int


@dataclass
class BifurcationResult:
    predicate: str
    rows: List[CRow]
    runs: List[RunRow]
    c_star: Optional[float]
    c_star_interval: Optional[tuple]
    findings: List[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "predicate": self.predicate,
            "c_star": self.c_star,
            "c_star_interval": list(self.c_star_interval) if self.c_star_interval else None,
            "rows": [vars(r) for r in self.rows],
            "findings": list(self.findings),
        }


def _one_run(sys: LatticeSystem, cfg: OrbitConfig, predicate: Predicate, c: float, seed: int) -> RunRow:
    s = sys.with_c(c)
    try:
        st = run_orbit(s, initial_state(s.m, seed), replace(cfg, seed=seed))
    except EscapeError as exc:
        return RunRow(c, seed, None, math.nan, math.nan, 0, False, error=str(exc))
    samples = None
    if st.trace is not None:
        tr = st.trace
        samples = tr[tr[:, 0] > cfg.burn_in, -1].tolist()
    return RunRow(c, seed, st.sustained_sync_time if isinstance(predicate, SyncWithin) else st.sync_time,
                  st.min_dist_after_burn_in, st.max_dist_after_burn_in, st.alternations,
                  predicate.holds(st), samples=samples)


def run_grid(sys: LatticeSystem, c_values: Sequence[float], seeds: Sequence[int], cfg: OrbitConfig,
             predicate: Predicate, threads: int = 1) -> List[RunRow]:
    """All (c, seed) runs, returned in (c, seed) order."""
    tasks = [(c, s) for c in c_values for s in seeds]
    if threads <= 1:
        return [_one_run(sys, cfg, predicate, c, s) for c, s in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: _one_run(sys, cfg, predicate, *t), tasks))


def _aggregate(c: float, runs: List[RunRow]) -> CRow:
    ok = [r for r in runs if r.error is None]
    n = len(runs)
    return CRow(
        c=c,
        sync_fraction=sum(r.holds for r in runs) / n,
        mean_alternations=float(np.mean([r.alternations for r in ok])) if ok else math.nan,
        mean_min_dist=float(np.mean([r.min_dist for r in ok])) if ok else math.nan,
        mean_max_dist=float(np.mean([r.max_dist for r in ok])) if ok else math.nan,
        n_runs=n,
        n_escapes=n - len(ok),
    )


def steepest_jump(rows: List[CRow]):
    """(midpoint, (c_left, c_right)) of the largest change in sync_fraction
    between neighbouring grid points, or (None, None) on a flat scan."""
    rows = sorted(rows, key=lambda r: r.c)
    best, where = 0.0, None
    for a, b in zip(rows, rows[1:]):
        jump = abs(b.sync_fraction - a.sync_fraction)
        if jump > best:
            best, where = jump, (a.c, b.c)
    if where is None:
        return None, None
    return 0.5 * (where[0] + where[1]), where


def monotonicity_findings(rows: List[CRow]) -> List[str]:
    """Drops of sync_fraction with increasing c beyond 3 binomial sigmas."""
    out = []
    rows = sorted(rows, key=lambda r: r.c)
    for a, b in zip(rows, rows[1:]):
        drop = a.sync_fraction - b.sync_fraction
        p = 0.5 * (a.sync_fraction + b.sync_fraction)
        sigma = math.sqrt(max(p * (1 - p), 1e-12) * (1.0 / a.n_runs + 1.0 / b.n_runs))
        if drop > 3 * sigma:
            out.append(f"sync_fraction drops from {a.sync_fraction:.3f} at c = {a.c} "
                       f"to {b.sync_fraction:.3f} at c = {b.c}")
    return out


def bifurcation_scan(sys: LatticeSystem, spec: SweepSpec, threads: int = 1,
                     refine_iterations: int = 0) -> BifurcationResult:
    """Score every (c, seed) run and locate the steepest sync_fraction jump.

    Escaping runs count as failures of the predicate and are tallied per row.
    With ``refine_iterations`` > 0 the jump interval is bisected further by
    :func:`refine_cstar`.
    """
    cfg = spec.run_config()
    seeds = spec.seeds
    runs = run_grid(sys, spec.c_values, seeds, cfg, spec.predicate, threads)
    k = len(seeds)
    rows = [_aggregate(c, runs[i * k:(i + 1) * k]) for i, c in enumerate(spec.c_values)]
    c_star, interval = steepest_jump(rows)
    res = BifurcationResult(spec.predicate.name, rows, runs, c_star, interval,
                            monotonicity_findings(rows))
    if refine_iterations > 0 and interval is not None:
        try:
            ref = refine_cstar(sys, interval[0], interval[1], spec.predicate, refine_iterations,
                               seeds=seeds, orbit=spec.orbit, threads=threads)
        except BracketError as exc:
            res.findings.append(f"refinement skipped: {exc}")
        else:
            res.c_star = ref.c_star
            res.c_star_interval = (ref.lo, ref.hi)
    return res


@dataclass
class CStar:
    c_star: float
    width: float
    lo: float
    hi: float
    iterations: int
    votes: List[tuple] = field(default_factory=list)


def _majority(sys, c, seeds, cfg, predicate, threads) -> bool:
    runs = run_grid(sys, [c], seeds, cfg, predicate, threads)
    return 2 * sum(r.holds for r in runs) > len(runs)


def refine_cstar(sys: LatticeSystem, lo: float, hi: float, predicate: Predicate, iterations: int,
                 seeds: Optional[Sequence[int]] = None, orbit: Optional[OrbitConfig] = None,
                 threads: int = 1, master_seed: int = 0, n_seeds: int = 16) -> CStar:
    """Bisection on the majority vote of ``predicate`` over seeds.

    The vote must differ at ``lo`` and ``hi``; each iteration halves the
    bracket. Returns its midpoint and width.
    """
    if not lo < hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    seeds = list(seeds) if seeds is not None else seed_list(master_seed, n_seeds)
    cfg = predicate.configure(orbit or OrbitConfig())
    v_lo = _majority(sys, lo, seeds, cfg, predicate, threads)
    v_hi = _majority(sys, hi, seeds, cfg, predicate, threads)
    votes = [(lo, v_lo), (hi, v_hi)]
    if v_lo == v_hi:
        raise BracketError(f"majority vote is {v_lo} at both c = {lo} and c = {hi}")
    for _ in range(int(iterations)):
        mid = 0.5 * (lo + hi)
        v = _majority(sys, mid, seeds, cfg, predicate, threads)
        votes.append((mid, v))
        if v == v_hi:
            hi = mid
        else:
            lo = mid
    return CStar(0.5 * (lo + hi), hi - lo, lo, hi, int(iterations), votes)
