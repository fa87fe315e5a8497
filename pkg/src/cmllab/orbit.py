"""Long-orbit simulation and distance-to-diagonal statistics.

Orbit runs use the compiled kernels in :mod:`cmllab._kernels`. By default
they add a *shadow perturbation*: a common-mode offset of at most 2^-53
(half an ulp of 1) to every coordinate at every step. It is the same size as
the rounding error already committed by a step, and it leaves the diagonal
exactly invariant. It exists because exact binary64 tent arithmetic is
degenerate. Without it, the mean of the coordinates follows an exact
doubling map and drains its low bits. Orbits then lock onto short dyadic
rationals, and near-diagonal pairs get pinned exactly onto the diagonal at
couplings where the dynamics is transversally expanding. Set
``shadow=False`` to iterate :func:`cmllab.maps.step` literally.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels as K
from .errors import ConfigError, EscapeError, PreconditionError
from .maps import CouplingSpec, GeneralTent, LatticeSystem, PerturbedTent, StandardTent

ORDER = "ORDER"
DISORDER = "DISORDER"


@dataclass(frozen=True)
class OrbitConfig:
    n_steps: int = 10_000
    burn_in: int = 0
    eps: float = 2.0 ** -30
    gamma: float = 2.0 ** -20
    trace_stride: int = 0
    seed: int = 0
    sync_tol: float = 1e-9
    sync_sustain: int = 1000
    shadow: bool = True
    stop_on_sync: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "burn_in", int(self.burn_in))
        object.__setattr__(self, "trace_stride", int(self.trace_stride))
        object.__setattr__(self, "sync_sustain", int(self.sync_sustain))
        object.__setattr__(self, "seed", int(self.seed))
        if self.n_steps < 1:
            raise ConfigError("n_steps must be positive")
        if not 0 <= self.burn_in < self.n_steps:
            raise ConfigError(f"burn_in ({self.burn_in}) must be in [0, n_steps)")
        if not (self.eps > 0 and self.gamma > 0):
            raise ConfigError("eps and gamma must be positive")
        if not self.eps < self.gamma:
            raise ConfigError(f"eps ({self.eps}) must be smaller than gamma ({self.gamma})")
        if self.trace_stride < 0:
            raise ConfigError("trace_stride must be >= 0")
        if not self.sync_tol > 0 or self.sync_sustain < 1:
            raise ConfigError("sync_tol must be positive and sync_sustain >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass
class OrbitStats:
    """Finite-horizon proxies for liminf/limsup of the diagonal distance.

    Min/max/occupation/entry counts cover the states ``burn_in+1 .. n_steps``;
    the synchronization fields cover the whole horizon ``0 .. n_steps``.
    With ``stop_on_sync`` the run ends at the step where synchronization has
    been sustained, and ``steps_run`` records where it stopped.
    """

    min_dist_after_burn_in: float
    max_dist_after_burn_in: float
    order_entries: int
    disorder_entries: int
    alternations: int
    occupation_fraction_order: float
    sync_time: Optional[int]
    final_state: list
    sustained_sync_time: Optional[int] = None
    max_dist_after_sync: Optional[float] = None
    n_steps: int = 0
    steps_run: int = 0
    burn_in: int = 0
    seed: int = 0
    eps: float = 0.0
    gamma: float = 0.0
    trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d


@dataclass(frozen=True)
class TransitionEvent:
    index: int
    label: str


@dataclass(frozen=True)
class TransverseCheck:
    predicted: float
    observed: float
    lower: float
    upper: float

    @property
    def ok(self) -> bool:
        return self.lower <= self.observed <= self.upper


@dataclass(frozen=True)
class TrappingReport:
    entry_step: Optional[int]
    tau1: float
    tau2: float
    horizon: int
    invariant: bool = True

    @property
    def trapped(self) -> bool:
        return self.entry_step is not None


# ---------------------------------------------------------------------------
# helpers


def initial_state(m: int, seed: int) -> np.ndarray:
    """Uniform initial state on [0,1]^m from a counter-based generator."""
    return np.random.Generator(np.random.Philox(int(seed))).random(m)


def shadow_key(seed: int) -> np.uint64:
    """Key of the shadow-perturbation stream belonging to ``seed``."""
    return np.random.SeedSequence([int(seed), 0x5AD0]).generate_state(1, np.uint64)[0]


def dist_syn(x) -> np.ndarray:
    """Euclidean distance to the diagonal, via (2m)^-1 sum_{i!=j}(x_i-x_j)^2.

    Accepts a single state or an array of states along the last axis.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    diff = x[..., :, None] - x[..., None, :]
    return np.sqrt(np.sum(diff * diff, axis=(-1, -2)) / (2.0 * m))


def dist_syn_quadratic(x) -> np.ndarray:
    """Distance to the diagonal via the quadratic form x^T (I - E0/m) x,
    with E0 the all-ones matrix, evaluated as |x - mean(x) e|."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    P = np.eye(m) - np.full((m, m), 1.0 / m)
    px = x @ P
    return np.sqrt(np.maximum(np.sum(px * x, axis=-1), 0.0))


def _kernel_state(sys: LatticeSystem, x0) -> np.ndarray:
    x = np.array(x0, dtype=float, copy=True)
    if x.shape != (sys.m,):
        raise PreconditionError(f"initial state must have shape ({sys.m},)")
    if np.any(~(x >= 0)) or np.any(~(x <= 1)):
        raise PreconditionError("initial state outside [0,1]^m")
    return np.ascontiguousarray(x)


# ---------------------------------------------------------------------------
# operations


def run_orbit(sys: LatticeSystem, x0, cfg: OrbitConfig) -> OrbitStats:
    """Iterate ``cfg.n_steps`` times and summarize the diagonal distance.

    Raises EscapeError (with ``step_index``) if an unflagged system leaves
    the unit cube.
    """
    x = _kernel_state(sys, x0)
    kind, pars, coeffs, A, c = sys.kernel_args()
    stride = cfg.trace_stride
    rows = cfg.n_steps // stride + 1 if stride > 0 else 0
    trace = np.zeros((rows, sys.m + 2)) if stride > 0 else np.zeros((0, sys.m + 2))
    ints, floats = K.orbit_kernel(
        kind, pars, coeffs, A, c, x, cfg.n_steps, cfg.burn_in, cfg.eps, cfg.gamma,
        cfg.sync_tol, cfg.sync_sustain, stride, cfg.shadow, shadow_key(cfg.seed),
        sys.nonnegative, trace, bool(cfg.stop_on_sync),
    )
    if ints[0] == K.STATUS_ESCAPE:
        n = int(ints[1])
        raise EscapeError(f"orbit left [0,1]^{sys.m} at step {n}: {x}", state=x.copy(), step_index=n)
    n_post = int(ints[8])
    steps_run = int(ints[1]) if ints[1] > 0 else cfg.n_steps
    if stride > 0:
        trace = trace[: steps_run // stride + 1]
    sync = int(ints[6])
    sustained = int(ints[7])
    return OrbitStats(
        min_dist_after_burn_in=float(floats[0]),
        max_dist_after_burn_in=float(floats[1]),
        order_entries=int(ints[2]),
        disorder_entries=int(ints[3]),
        alternations=int(ints[4]),
        occupation_fraction_order=int(ints[5]) / n_post if n_post else math.nan,
        sync_time=sync if sync >= 0 else None,
        final_state=x.tolist(),
        sustained_sync_time=sustained if sustained >= 0 else None,
        max_dist_after_sync=float(floats[2]) if sync >= 0 else None,
        n_steps=cfg.n_steps,
        steps_run=steps_run,
        burn_in=cfg.burn_in,
        seed=cfg.seed,
        eps=cfg.eps,
        gamma=cfg.gamma,
        trace=trace if stride > 0 else None,
    )


def detect_transitions(trace, eps: float, gamma: float) -> List[TransitionEvent]:
    """Schmitt-trigger switch points of a distance sequence.

    ``trace`` is a 1-D array of distances or a trace array whose last column
    holds the distance. The first sample fixes the starting label (ORDER if
    it is at most ``eps``, DISORDER otherwise) and is not itself an event.
    """
    if not eps < gamma:
        raise ConfigError(f"eps ({eps}) must be smaller than gamma ({gamma})")
    arr = np.asarray(trace, dtype=float)
    dist = arr[:, -1] if arr.ndim == 2 else arr
    ev = K.schmitt_events(np.ascontiguousarray(dist), float(eps), float(gamma))
    return [TransitionEvent(int(i), ORDER if lab == 1 else DISORDER) for i, lab in ev]


def transverse_factor(sys: LatticeSystem, X) -> np.ndarray:
    """Observed |x1'-x2'|/|x1-x2| for an (n, 2) array of two-node states.

    Both differences are evaluated with error-free (double-double)
    arithmetic on the same step formula, so the ratio is accurate to a few
    ulps even when the two coordinates are nearly equal.
    """
    if sys.m != 2:
        raise PreconditionError("transverse factor needs m = 2")
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    kind, pars, coeffs, A, c = sys.kernel_args()
    return K.transverse_ratio_kernel(kind, pars, coeffs, A, c, X)


def predicted_transverse_bounds(sys: LatticeSystem, x=None):
    """(predicted, lower, upper) for the same-branch transverse factor."""
    c = sys.c
    fm = sys.map
    if isinstance(fm, StandardTent):
        p = 2.0 * (1.0 - 2.0 * c)
        return p, p, p
    if isinstance(fm, PerturbedTent):
        eta = fm.perturbation.sup_g1
        lo = (1.0 - 2.0 * c) * (2.0 - fm.s0 - eta)
        hi = (1.0 - 2.0 * c) * (2.0 + eta)
        return (1.0 - 2.0 * c) * fm.s, lo, hi
    # general tent: the branch slope is fixed on each side of the kink
    slope = fm.left_slope if x is not None and x[0] < fm.kink else fm.right_slope
    p = slope * (1.0 - 2.0 * c)
    return p, p, p


def transverse_factor_check(sys: LatticeSystem, x, rel_tol: float = 1e-12) -> TransverseCheck:
    """Compare the observed per-step factor of |x1 - x2| with 2(1-2c)."""
    x = np.asarray(x, dtype=float)
    if sys.m != 2:
        raise PreconditionError("transverse_factor_check needs m = 2")
    kink = sys.map.kink
    if x[0] == x[1]:
        raise PreconditionError("coordinates coincide")
    if (x[0] < kink) != (x[1] < kink) or kink in (x[0], x[1]):
        raise PreconditionError("coordinates are not strictly on the same branch")
    pred, lo, hi = predicted_transverse_bounds(sys, x)
    obs = float(transverse_factor(sys, x[None, :])[0])
    if isinstance(sys.map, PerturbedTent):
        return TransverseCheck(pred, obs, lo, hi)
    tol = rel_tol * abs(pred) + (1e-300 if pred == 0 else 0.0)
    return TransverseCheck(pred, obs, lo - tol, hi + tol)


def sync_time(sys: LatticeSystem, x0, tol: float, horizon: int, sustain: int = 1,
              shadow: bool = True, seed: int = 0) -> Optional[int]:
    """First n <= horizon with dist_syn <= tol (or the start of the first run
    of ``sustain`` such states); None when there is none."""
    if not tol > 0:
        raise ConfigError("tol must be positive")
    x = _kernel_state(sys, x0)
    kind, pars, coeffs, A, c = sys.kernel_args()
    status, n = K.sync_search(kind, pars, coeffs, A, c, x, int(horizon), float(tol),
                              int(sustain), shadow, shadow_key(seed), sys.nonnegative)
    if status == K.STATUS_ESCAPE:
        raise EscapeError(f"orbit left [0,1]^{sys.m} at step {n}", state=x.copy(), step_index=int(n))
    return int(n) if n >= 0 else None


def trapping_bounds(sys: LatticeSystem):
    """(tau1, tau2) of the trapping interval [tau2, 1 - tau1].

    tau1 = s0/2 - eta and tau2 = (1 - c)(s - eta)(s0/2 - eta). For a
    PerturbedTent, eta is the certified C^2 bound of its perturbation. A
    GeneralTent with alpha2 = 0 is the tent of slope s = 2 - alpha1 and
    peak s/2; it is accepted with s0 = alpha1 and eta = 0.
    """
    fm = sys.map
    if isinstance(fm, PerturbedTent) and fm.s0 > 0:
        s0, s, eta = fm.s0, fm.s, fm.perturbation.c2_bound
    elif isinstance(fm, GeneralTent) and fm.alpha2 == 0.0 and fm.alpha1 > 0:
        s0, s, eta = fm.alpha1, fm.left_slope, 0.0
    else:
        raise PreconditionError(
            "trapping needs a PerturbedTent with s0 > 0 or a GeneralTent with "
            "alpha1 > 0 and alpha2 = 0"
        )
    tau1 = s0 / 2.0 - eta
    tau2 = (1.0 - sys.c) * (s - eta) * (s0 / 2.0 - eta)
    if not (tau1 > 0 and tau2 > 0):
        raise PreconditionError("eta is too large relative to s0 for a trapping interval")
    return tau1, tau2


def interval_is_invariant(sys: LatticeSystem, lo: float, hi: float, n_grid: int = 4097) -> bool:
    """Whether f([lo, hi]) is contained in [lo, hi] (checked on a grid that
    includes the kink), which makes [lo, hi]^m forward invariant under every
    system with the nonnegativity flag."""
    xs = np.unique(np.concatenate([np.linspace(lo, hi, n_grid), [sys.map.kink]]))
    xs = xs[(xs >= lo) & (xs <= hi)]
    fx = sys.map._eval(xs, 0)
    slack = sys.map.sup_d2 * ((hi - lo) / (n_grid - 1)) ** 2 / 8.0
    return bool(sys.nonnegative and fx.min() - slack >= lo and fx.max() + slack <= hi)


def trapping_check(sys: LatticeSystem, x0, horizon: int, hold: int = 100) -> TrappingReport:
    """First step after which the orbit stays in [tau2, 1 - tau1]^m for
    ``hold`` consecutive steps. Not trapping within the horizon is reported,
    not raised."""
    tau1, tau2 = trapping_bounds(sys)
    x = _kernel_state(sys, x0)
    kind, pars, coeffs, A, c = sys.kernel_args()
    status, n = K.trap_kernel(kind, pars, coeffs, A, c, x, int(horizon), tau2, 1.0 - tau1,
                              int(hold), sys.nonnegative)
    if status == K.STATUS_ESCAPE:
        raise EscapeError("orbit left the unit cube", state=x.copy(), step_index=int(n))
    return TrappingReport(int(n) if n >= 0 else None, tau1, tau2, int(horizon),
                          interval_is_invariant(sys, tau2, 1.0 - tau1))


def run_ensemble(sys: LatticeSystem, cfg: OrbitConfig, seeds, threads: int = 1) -> List[OrbitStats]:
    """Independent orbits from ``initial_state(m, seed)``; results come back
    in seed order irrespective of completion order."""
    from dataclasses import replace

    seeds = [int(s) for s in seeds]

    def one(s):
        return run_orbit(sys, initial_state(sys.m, s), replace(cfg, seed=s))

    if threads <= 1 or len(seeds) <= 1:
        return [one(s) for s in seeds]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))


def same_cell_expansion_floor(coupling: CouplingSpec, c: float) -> float:
    """4 (1 - (2c||A|| + c^2 ||A||^2)), the squared-distance factor floor on
    a single cell."""
    a = coupling.norm
    return 4.0 * (1.0 - (2.0 * c * a + c * c * a * a))
