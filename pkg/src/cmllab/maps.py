"""Interval maps, coupling matrices and the coupled lattice map T.

The lattice map is ``x(n+1) = (I + cA) f(x(n))`` with ``A`` symmetric and
``A e = 0``. Three interior maps are provided: the standard tent
``1 - 2|x - 1/2|``, a two-parameter general tent with a shifted kink, and a
tent of slope ``2 - s0`` perturbed by a finite sine series.

Branch convention: the left branch applies for ``x < kink`` and the right
branch for ``x >= kink``. The same convention is used by
:func:`branch_signature`, so ``x_i = 1/2`` belongs to the right half.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DomainError, EscapeError, SingularityError

RANGE_GRID = 4097
MAX_MODES = 8


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class PerturbationSpec:
    """Sine-series perturbation g(x) = sum_k a_k sin(k pi x), k = 1..K."""

    coefficients: tuple = ()

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if len(coeffs) > MAX_MODES:
            raise ConfigError(f"at most {MAX_MODES} sine modes, got {len(coeffs)}")
        if not all(math.isfinite(a) for a in coeffs):
            raise ConfigError("perturbation coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)

    def _weights(self, power):
        k = np.arange(1, len(self.coefficients) + 1) * math.pi
        return float(np.sum(np.abs(self.array) * k ** power)) if self.coefficients else 0.0

    @property
    def sup_g(self) -> float:
        """Analytic bound on sup |g|."""
        return self._weights(0)

    @property
    def sup_g1(self) -> float:
        """Analytic bound on sup |g'|."""
        return self._weights(1)

    @property
    def sup_g2(self) -> float:
        """Analytic bound on sup |g''|."""
        return self._weights(2)

    @property
    def c1_bound(self) -> float:
        return self.sup_g + self.sup_g1

    @property
    def c2_bound(self) -> float:
        """sum |a_k| (1 + k pi + (k pi)^2), an upper bound for the C^2 norm."""
        return self.sup_g + self.sup_g1 + self.sup_g2


# ---------------------------------------------------------------------------
# interior maps


class InteriorMap1D:
    """Common interface of the three map variants."""

    variant: str = ""
    kind: int = -1

    # subclasses fill these in
    @property
    def kink(self) -> float:
        raise NotImplementedError

    def kernel_params(self):
        """(kind, pars, coeffs) as consumed by the compiled kernels."""
        raise NotImplementedError

    @property
    def symmetric(self) -> bool:
        """True when f(x) = f(1 - x) holds identically."""
        return False

    def slope_bounds(self):
        """(nu_minus, nu_plus): inf and sup of |f'| away from the kink."""
        raise NotImplementedError

    @property
    def sup_d2(self) -> float:
        """Bound on |f''| away from the kink."""
        return 0.0

    def to_dict(self) -> dict:
        raise NotImplementedError

    # evaluation ---------------------------------------------------------

    def _eval(self, x, order):
        kind, pars, coeffs = self.kernel_params()
        arr = np.asarray(x, dtype=float)
        out = K.map_array(kind, pars, coeffs, np.ascontiguousarray(arr.ravel()), order)
        out = out.reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def __call__(self, x):
        return eval_map(self, x)

    def derivative(self, x):
        return eval_derivative(self, x)

    def second_derivative(self, x):
        return self._eval(x, 2)

    # range validation ---------------------------------------------------

    def branch_derivative(self, x, right: bool):
        """Derivative of the left or right branch formula, valid up to and
        including the kink."""
        raise NotImplementedError

    def range_certificate(self, n_grid: int = RANGE_GRID):
        """Certified lower/upper bounds of f on [0,1].

        The grid has ``n_grid`` points with the kink inserted as an extra
        node, so f is smooth between neighbours. On each cell the bound
        combines the interpolation error h^2/8 sup|f''| with one-sided Taylor
        bounds from both ends, which stays sharp where f touches 0 or 1.
        """
        kink = self.kink
        xs = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_grid), [kink]]))
        fx = self._eval(xs, 0)
        a, b = xs[:-1], xs[1:]
        fa, fb = fx[:-1], fx[1:]
        right = a >= kink
        da = np.where(right, self.branch_derivative(a, True), self.branch_derivative(a, False))
        db = np.where(right, self.branch_derivative(b, True), self.branch_derivative(b, False))
        h = b - a
        d2 = self.sup_d2
        quad = d2 * h * h / 2.0
        interp = d2 * h * h / 8.0
        hi = np.minimum.reduce([
            np.maximum(fa, fb) + interp,
            fa + np.maximum(0.0, da * h + quad),
            fb + np.maximum(0.0, -db * h + quad),
        ])
        lo = np.maximum.reduce([
            np.minimum(fa, fb) - interp,
            fa + np.minimum(0.0, da * h - quad),
            fb + np.minimum(0.0, -db * h - quad),
        ])
        return float(lo.min()), float(hi.max())

    def validate_range(self):
        lo, hi = self.range_certificate()
        if lo < 0.0 or hi > 1.0:
            raise ConfigError(
                f"{self.variant}: f([0,1]) is not certified inside [0,1] "
                f"(bounds {lo:.6g}, {hi:.6g})"
            )


class StandardTent(InteriorMap1D):
    """f(x) = 1 - 2|x - 1/2|, evaluated as 2x or 2(1 - x)."""

    variant = "StandardTent"
    kind = K.KIND_STANDARD
    _PARS = np.array([2.0, 2.0, 0.5, 2.0])
    _COEFFS = np.zeros(0)

    @property
    def kink(self):
        return 0.5

    @property
    def symmetric(self):
        return True

    def kernel_params(self):
        return self.kind, self._PARS, self._COEFFS

    def slope_bounds(self):
        return 2.0, 2.0

    def branch_derivative(self, x, right):
        return np.full(np.shape(x), -2.0 if right else 2.0)

    def to_dict(self):
        return {"variant": self.variant}

    def __eq__(self, other):
        return isinstance(other, StandardTent)

    def __hash__(self):
        return hash(self.variant)

    def __repr__(self):
        return "StandardTent()"


@dataclass(frozen=True, eq=True)
class GeneralTent(InteriorMap1D):
    """Piecewise linear tent with slope deficit alpha1 and kink shift alpha2.

    f(x) = (2 - alpha1) x on x < 1/2 - alpha2 and
    f(x) = (1 - 2 alpha2)/(1 + 2 alpha2) (2 - alpha1)(1 - x) otherwise.
    """

    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha_bound: float = 0.05
    check: bool = field(default=True, compare=False)

    variant = "GeneralTent"
    kind = K.KIND_GENERAL

    def __post_init__(self):
        object.__setattr__(self, "alpha1", float(self.alpha1))
        object.__setattr__(self, "alpha2", float(self.alpha2))
        if self.check:
            for name in ("alpha1", "alpha2"):
                if not abs(getattr(self, name)) < self.alpha_bound:
                    raise ConfigError(
                        f"GeneralTent: |{name}| = {abs(getattr(self, name))} "
                        f"must be below {self.alpha_bound}"
                    )
            self.validate_range()

    @property
    def kink(self):
        return 0.5 - self.alpha2

    @property
    def left_slope(self):
        return 2.0 - self.alpha1

    @property
    def right_slope(self):
        return (1.0 - 2.0 * self.alpha2) / (1.0 + 2.0 * self.alpha2) * (2.0 - self.alpha1)

    @property
    def symmetric(self):
        return self.alpha2 == 0.0

    def kernel_params(self):
        pars = np.array([self.left_slope, self.right_slope, self.kink, 2.0])
        return self.kind, pars, np.zeros(0)

    def slope_bounds(self):
        a, b = abs(self.left_slope), abs(self.right_slope)
        return min(a, b), max(a, b)

    def branch_derivative(self, x, right):
        return np.full(np.shape(x), -self.right_slope if right else self.left_slope)

    def to_dict(self):
        return {"variant": self.variant, "alpha1": self.alpha1, "alpha2": self.alpha2}


@dataclass(frozen=True, eq=True)
class PerturbedTent(InteriorMap1D):
    """f(x) = 1 - s|x - 1/2| + g(x) with s = 2 - s0 and g a sine series."""

    s0: float = 0.0
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    s0_bound: float = 0.1
    eta: float = 1e-3
    check: bool = field(default=True, compare=False)

    variant = "PerturbedTent"
    kind = K.KIND_PERTURBED

    def __post_init__(self):
        object.__setattr__(self, "s0", float(self.s0))
        if not isinstance(self.perturbation, PerturbationSpec):
            object.__setattr__(self, "perturbation", PerturbationSpec(tuple(self.perturbation)))
        if not 0.0 <= self.s0 < 1.0:
            raise ConfigError(f"PerturbedTent: s0 = {self.s0} must lie in [0, 1)")
        if self.check:
            if self.s0 > self.s0_bound:
                raise ConfigError(f"PerturbedTent: s0 = {self.s0} exceeds the bound {self.s0_bound}")
            bound = self.perturbation.c2_bound
            if not bound < self.eta:
                raise ConfigError(
                    f"PerturbedTent: C^2 bound of g is {bound:.6g}, must be below eta = {self.eta}"
                )
            self.validate_range()

    @property
    def s(self):
        return 2.0 - self.s0

    @property
    def kink(self):
        return 0.5

    @property
    def symmetric(self):
        # sin(k pi (1 - x)) = (-1)^(k+1) sin(k pi x): only odd modes are symmetric
        return all(a == 0.0 for a in self.perturbation.coefficients[1::2])

    @property
    def sup_d2(self):
        return self.perturbation.sup_g2

    def kernel_params(self):
        return self.kind, np.array([2.0, 2.0, 0.5, self.s]), self.perturbation.array

    def slope_bounds(self):
        e = self.perturbation.sup_g1
        return self.s - e, self.s + e

    def g(self, x):
        k = np.arange(1, len(self.perturbation.coefficients) + 1) * math.pi
        x = np.asarray(x, dtype=float)
        return np.sin(np.multiply.outer(x, k)) @ self.perturbation.array if k.size else np.zeros(x.shape)

    def g1(self, x):
        k = np.arange(1, len(self.perturbation.coefficients) + 1) * math.pi
        x = np.asarray(x, dtype=float)
        if not k.size:
            return np.zeros(x.shape)
        return np.cos(np.multiply.outer(x, k)) @ (self.perturbation.array * k)

    def branch_derivative(self, x, right):
        return (-self.s if right else self.s) + self.g1(x)

    def to_dict(self):
        return {
            "variant": self.variant,
            "s0": self.s0,
            "coefficients": list(self.perturbation.coefficients),
            "eta": self.eta,
        }


def eval_map(f: InteriorMap1D, x):
    """Evaluate f at a scalar or array; raises DomainError outside [0,1]."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr >= 0.0)) or np.any(~(arr <= 1.0)):
        raise DomainError(f"eval_map: argument outside [0,1]: {x!r}")
    return f._eval(arr, 0)


def eval_derivative(f: InteriorMap1D, x):
    """Signed slope f'(x); raises SingularityError at the kink."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr == f.kink):
        raise SingularityError(f"derivative undefined at the kink x = {f.kink}", [f.kink])
    return f._eval(arr, 1)


# ---------------------------------------------------------------------------
# coupling and lattice system


class CouplingSpec:
    """Symmetric coupling matrix with zero row sums.

    Only the upper triangle of the supplied matrix is kept and mirrored, so
    ``A == A.T`` holds exactly.
    """

    def __init__(self, A, symmetry_tol: float = 1e-12, row_tol: float = 1e-12):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError(f"coupling matrix must be square, got shape {A.shape}")
        m = A.shape[0]
        if m < 2:
            raise ConfigError("coupling needs at least two nodes")
        if not np.all(np.isfinite(A)):
            raise ConfigError("coupling matrix has non-finite entries")
        asym = np.abs(A - A.T)
        if np.any(asym > symmetry_tol):
            i, j = np.unravel_index(np.argmax(asym), asym.shape)
            raise ConfigError(f"coupling matrix is not symmetric at ({i}, {j})")
        upper = np.triu(A)
        A = upper + np.triu(A, 1).T
        sums = A.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums) > row_tol)
        if bad.size:
            r = int(bad[0])
            raise ConfigError(f"coupling row {r} sums to {sums[r]:.3g}, expected 0")
        A.setflags(write=False)
        self._A = A

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def m(self) -> int:
        return self._A.shape[0]

    @property
    def norm(self) -> float:
        """Spectral norm of A."""
        return float(np.linalg.norm(self._A, 2))

    @classmethod
    def two_node(cls):
        return cls([[-1.0, 1.0], [1.0, -1.0]])

    @classmethod
    def all_to_all(cls, m: int):
        A = np.ones((m, m)) - m * np.eye(m)
        return cls(A)

    @classmethod
    def path(cls, m: int):
        A = np.zeros((m, m))
        for i in range(m - 1):
            A[i, i + 1] = A[i + 1, i] = 1.0
        A -= np.diag(A.sum(axis=1))
        return cls(A)

    def to_dict(self):
        return {"m": self.m, "A": self._A.tolist()}

    def __eq__(self, other):
        return isinstance(other, CouplingSpec) and np.array_equal(self._A, other._A)

    def __hash__(self):
        return hash(self._A.tobytes())

    def __repr__(self):
        return f"CouplingSpec(m={self.m})"


class LatticeSystem:
    """The coupled map T(x) = (I + cA) f(x) on [0,1]^m."""

    def __init__(self, fmap: InteriorMap1D, coupling: CouplingSpec = None, c: float = 0.0):
        if coupling is None:
            coupling = CouplingSpec.two_node()
        c = float(c)
        if not 0.0 <= c <= 1.0:
            raise ConfigError(f"coupling coefficient c = {c} must lie in [0, 1]")
        self.map = fmap
        self.coupling = coupling
        self.c = c
        M = np.eye(coupling.m) + c * coupling.A
        M.setflags(write=False)
        self.matrix = M
        self.nonnegative = bool(np.all(M >= 0.0))

    @property
    def m(self) -> int:
        return self.coupling.m

    def with_c(self, c: float) -> "LatticeSystem":
        return LatticeSystem(self.map, self.coupling, c)

    def kernel_args(self):
        kind, pars, coeffs = self.map.kernel_params()
        return kind, pars, coeffs, np.ascontiguousarray(self.coupling.A), self.c

    def to_dict(self) -> dict:
        return {"map": self.map.to_dict(), "coupling": self.coupling.to_dict(), "c": self.c}

    def content_hash(self) -> str:
        """git-style blob hash of the canonical JSON system definition."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        header = f"blob {len(payload)}\0".encode()
        return hashlib.sha1(header + payload).hexdigest()

    def __repr__(self):
        return f"LatticeSystem({self.map!r}, m={self.m}, c={self.c})"


def two_node_tent(c: float) -> LatticeSystem:
    """Canonical two-node standard-tent system."""
    return LatticeSystem(StandardTent(), CouplingSpec.two_node(), c)


def _as_state(sys: LatticeSystem, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (sys.m,):
        raise DomainError(f"state must have shape ({sys.m},), got {x.shape}")
    if np.any(~(x >= 0.0)) or np.any(~(x <= 1.0)):
        raise DomainError(f"state outside [0,1]^{sys.m}: {x}")
    return x


def step(sys: LatticeSystem, x) -> np.ndarray:
    """Apply T once. Systems without the nonnegativity flag raise
    EscapeError when the image leaves [0,1]^m."""
    x = _as_state(sys, x)
    out = np.empty_like(x)
    kind, pars, coeffs, A, c = sys.kernel_args()
    status = K.step_kernel(kind, pars, coeffs, A, c, x, sys.nonnegative, out)
    if status != K.STATUS_OK:
        raise EscapeError(f"state left [0,1]^{sys.m}: {out}", state=out)
    return out


def step_batch(sys: LatticeSystem, X) -> np.ndarray:
    """Apply T to every row of an (n, m) array of states."""
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != sys.m:
        raise DomainError(f"states must have shape (n, {sys.m}), got {X.shape}")
    if np.any(~(X >= 0.0)) or np.any(~(X <= 1.0)):
        raise DomainError(f"states outside [0,1]^{sys.m}")
    out = np.empty_like(X)
    kind, pars, coeffs, A, c = sys.kernel_args()
    bad = K.step_many(kind, pars, coeffs, A, c, X, sys.nonnegative, out)
    if bad >= 0:
        raise EscapeError(f"row {bad} left [0,1]^{sys.m}: {out[bad]}", state=out[bad])
    return out


def branch_signature(x) -> tuple:
    """Cell index J: bit i is 1 iff x_i >= 1/2."""
    x = np.asarray(x, dtype=float)
    return tuple(int(v >= 0.5) for v in x)


def jacobian(sys: LatticeSystem, x) -> np.ndarray:
    """(I + cA) diag(f'(x_1), ..., f'(x_m))."""
    x = np.asarray(x, dtype=float)
    kinks = [i for i, v in enumerate(x) if v == sys.map.kink]
    if kinks:
        raise SingularityError(f"coordinates {kinks} sit at the kink", kinks)
    return sys.matrix * sys.map._eval(x, 1)[None, :]
