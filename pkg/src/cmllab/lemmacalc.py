"""Expansion bounds and Iteration Lemma constants.

Given a system, :func:`expansion_bounds` returns the extreme expansion rates
E_- <= E_+ of T, either for areas (|det JT|) or for curve lengths (singular
values of JT). :func:`derive_iteration_constants` turns them, together with a
component budget (a, m0), a scale delta1 and an exponent mu, into the
constants d, F, N0 and the lower bound c1 of the iteration argument.

Logarithms are taken in base 2 so that dyadic inputs such as E = 2,
a = 4, delta1 = 2^-16 give exact results.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import HypothesisViolation, PreconditionError
from .maps import GeneralTent, LatticeSystem, PerturbedTent

SET = "set"
CURVE = "curve"
_MODE_ALIASES = {"set": SET, "measurableset": SET, "measurable": SET, "curve": CURVE}
MAX_PATTERN_M = 16
TAIL_TOL = 1e-15


@dataclass(frozen=True)
class ExpansionBounds:
    e_plus: float
    e_minus: float
    mode: str

    def __post_init__(self):
        if not (self.e_plus >= self.e_minus > 0):
            raise HypothesisViolation(
                f"expansion bounds need e_plus >= e_minus > 0, got {self.e_plus}, {self.e_minus}")


def _mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[str(mode).replace("_", "").replace("-", "").lower()]
    except KeyError:
        raise PreconditionError(f"unknown expansion mode {mode!r}") from None


def expansion_bounds(sys: LatticeSystem, mode: str = CURVE) -> ExpansionBounds:
    """Closed-form E_+ and E_- of the system.

    Set mode: |det(I + cA)| nu_+^m and |det(I + cA)| nu_-^m, where nu_- and nu_+
    bound |f'|. Curve mode: extreme singular values of (I + cA) diag(d) over
    the branch slope patterns d of a tent (exact), or ||I + cA|| nu_+ and
    sigma_min(I + cA) nu_- for a perturbed tent (certified bounds).
    """
    mode = _mode(mode)
    M = sys.matrix
    m = sys.m
    nu_lo, nu_hi = sys.map.slope_bounds()
    if mode == SET:
        det = abs(float(np.linalg.det(M)))
        return ExpansionBounds(det * nu_hi ** m, det * nu_lo ** m, SET)
    if isinstance(sys.map, PerturbedTent):
        sv = np.linalg.svd(M, compute_uv=False)
        return ExpansionBounds(float(sv[0] * nu_hi), float(sv[-1] * nu_lo), CURVE)
    if m > MAX_PATTERN_M:
        raise PreconditionError(f"branch patterns enumerated only up to m = {MAX_PATTERN_M}")
    if isinstance(sys.map, GeneralTent):
        slopes = (sys.map.left_slope, -sys.map.right_slope)
    else:
        slopes = (2.0, -2.0)
    hi, lo = 0.0, math.inf
    for pattern in itertools.product(slopes, repeat=m):
        sv = np.linalg.svd(M * np.array(pattern)[None, :], compute_uv=False)
        hi = max(hi, float(sv[0]))
        lo = min(lo, float(sv[-1]))
    return ExpansionBounds(hi, lo, CURVE)


@dataclass
class IterationDerived:
    mu: float
    d: float
    f_const: float
    n0: int
    mu_upper: float
    c1_lower: float
    log_ratio: float
    log2_f: float
    n_terms: int
    inputs: dict = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _log2_ratio(bounds: ExpansionBounds, a: float, m0: int) -> float:
    """log_{E+}(E- / a^(1/m0))."""
    lp = math.log2(bounds.e_plus)
    if lp <= 0:
        raise HypothesisViolation("E_+ must exceed 1")
    return (math.log2(bounds.e_minus) - math.log2(a) / m0) / lp


def c1_product(f_const: float, d: float, mu: float, start: int, extra: int = 0):
    """Product of (1 - F 2^(-d mu^j)) over j >= start.

    Terms are taken until the remaining tail sum of F 2^(-d mu^j) is below
    1e-15, plus ``extra`` further factors. Returns (product, terms used).
    """
    log2f = math.log2(f_const)
    prod = 1.0
    j = start
    n = 0
    while True:
        term = 2.0 ** (log2f - d * mu ** j)
        prod *= 1.0 - term
        n += 1
        nxt = 2.0 ** (log2f - d * mu ** (j + 1))
        # the terms decay at least geometrically with ratio nxt/term < 1
        ratio = nxt / term if term > 0 else 0.0
        if ratio < 1 and nxt / (1.0 - ratio) < TAIL_TOL:
            break
        j += 1
        if n > 100_000:
            raise HypothesisViolation("c1 product does not converge")
    for _ in range(extra):
        j += 1
        prod *= 1.0 - 2.0 ** (log2f - d * mu ** j)
        n += 1
    return prod, n


def derive_iteration_constants(bounds: ExpansionBounds, a: float, m0: int, delta1: float,
                               mu: Optional[float] = None) -> IterationDerived:
    """Constants of the iteration argument from expansion bounds.

    mu_upper = 1 / (1 - q) with q = log_{E+}(E- / a^(1/m0));
    d = 1 - (1 - q) mu; F = a (E- / a^(1/m0))^(1 - log_{E+} delta1);
    N0 = floor(log_mu(log2(F) / d)). ``mu`` defaults to the midpoint of
    (1, mu_upper). c1_lower is the product of (1 - F 2^(-d mu^j)) from
    j = N0 + 1: the factor at j = N0 itself is never positive, because
    d mu^N0 <= log2 F by the definition of N0.
    """
    if not (a >= 1 and m0 >= 1):
        raise HypothesisViolation("need a >= 1 and m0 >= 1")
    if not 0 < delta1 < 1:
        raise HypothesisViolation("delta1 must lie in (0, 1)")
    if a >= bounds.e_minus ** m0:
        raise HypothesisViolation(f"a = {a} must be below E_-^m0 = {bounds.e_minus ** m0:.6g}")
    q = _log2_ratio(bounds, a, m0)
    # 1 - q, computed directly so that dyadic inputs stay exact
    gap = (math.log2(a) / m0 - (math.log2(bounds.e_minus) - math.log2(bounds.e_plus))) / math.log2(bounds.e_plus)
    mu_upper = math.inf if gap <= 0 else 1.0 / gap
    if mu is None:
        mu = 2.0 if math.isinf(mu_upper) else 0.5 * (1.0 + mu_upper)
    if not 1.0 < mu < mu_upper:
        raise HypothesisViolation(f"mu = {mu} outside the admissible interval (1, {mu_upper})")
    d = (mu_upper - mu) / mu_upper if math.isfinite(mu_upper) else 1.0
    log2f = math.log2(a) + (math.log2(bounds.e_minus) - math.log2(a) / m0) * (
        1.0 - math.log2(delta1) / math.log2(bounds.e_plus))
    f_const = 2.0 ** log2f
    if log2f <= 0:
        n0 = 0
    else:
        n0 = int(math.floor(math.log(log2f / d) / math.log(mu) + 1e-12))
    c1, n_terms = c1_product(f_const, d, mu, n0 + 1)
    out = IterationDerived(
        mu=mu, d=d, f_const=f_const, n0=n0, mu_upper=mu_upper, c1_lower=c1,
        log_ratio=q, log2_f=log2f, n_terms=n_terms,
        inputs={"e_plus": bounds.e_plus, "e_minus": bounds.e_minus, "mode": bounds.mode,
                "a": a, "m0": m0, "delta1": delta1},
    )
    if (bounds.e_plus, bounds.e_minus, a, m0, mu) == (2.0, 2.0, 4, 6, 2.0) and n0 != 4:
        out.notes.append(
            f"direct evaluation gives N0 = {n0}; N0 = 4 is the value usually quoted for "
            "a = 4, m0 = 6, mu = 2")
    return out


def k_of_measure(measure_ratio: float, bounds: ExpansionBounds, delta1: float) -> int:
    """k = floor(-log_{E+}(ratio / delta1)), the iteration count that brings a
    set of relative measure ``ratio`` up to scale delta1."""
    if not 0 < measure_ratio <= 1:
        raise PreconditionError("measure ratio must lie in (0, 1]")
    if measure_ratio > delta1 * (1 + 1e-12):
        raise PreconditionError(f"measure ratio {measure_ratio} exceeds delta1 = {delta1}")
    x = -(math.log2(measure_ratio) - math.log2(delta1)) / math.log2(bounds.e_plus)
    return max(0, int(math.floor(x + 1e-12)))


# ---------------------------------------------------------------------------
# survivor-mass audit


@dataclass
class SurvivorAudit:
    n: int
    k: int
    ratio: float
    threshold: float
    measured: float
    bound: float
    slack: float
    components: int

    @property
    def ok(self) -> bool:
        return self.measured >= self.bound - self.slack


def survivor_audit(sys: LatticeSystem, segment, N: int, consts: IterationDerived,
                   slack: float = 1e-3) -> SurvivorAudit:
    """Check the surviving-mass conclusion of the iteration argument.

    The segment's length (the reference domain has measure 1) must lie in
    [2^(-mu^(N+1)), 2^(-mu^N)]. After k(N) steps, the root measure of the
    components whose image is at least 2^(-mu^N) long is compared with
    (1 - F 2^(-d mu^N)) times the segment length.
    """
    from .curvelab import iterate_curve

    mu, d = consts.mu, consts.d
    ratio = segment.length
    lo, hi = 2.0 ** -(mu ** (N + 1)), 2.0 ** -(mu ** N)
    if not lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12):
        raise PreconditionError(f"segment length {ratio:.3g} outside [{lo:.3g}, {hi:.3g}]")
    bounds = ExpansionBounds(consts.inputs["e_plus"], consts.inputs["e_minus"], consts.inputs["mode"])
    k = k_of_measure(ratio, bounds, consts.inputs["delta1"])
    forest = iterate_curve(sys, segment, k)
    threshold = hi
    mass = 0.0
    for comp in forest.levels[k]:
        if comp.length >= threshold:
            t0, t1 = comp.interval
            mass += t1 - t0
    bound = 1.0 - consts.f_const * 2.0 ** (-d * mu ** N)
    return SurvivorAudit(N, k, ratio, threshold, mass, bound, slack, forest.count(k))


def admissible_segment_length(rng: np.random.Generator, mu: float, N: int) -> float:
    """Log-uniform length in [2^(-mu^(N+1)), 2^(-mu^N)]."""
    return 2.0 ** -(mu ** N + rng.random() * (mu ** (N + 1) - mu ** N))


def sampled_expansion(sys: LatticeSystem, mode: str, n: int = 100_000, seed: int = 0):
    """(max, min) of |det JT| or of the singular values of JT at random points."""
    mode = _mode(mode)
    rng = np.random.default_rng(seed)
    X = rng.random((n, sys.m))
    X[X == sys.map.kink] = np.nextafter(sys.map.kink, 0.0)
    D = sys.map._eval(X.ravel(), 1).reshape(X.shape)
    J = sys.matrix[None, :, :] * D[:, None, :]
    if mode == SET:
        v = np.abs(np.linalg.det(J))
        return float(v.max()), float(v.min())
    sv = np.linalg.svd(J, compute_uv=False)
    return float(sv[:, 0].max()), float(sv[:, -1].min())
