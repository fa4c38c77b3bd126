"""Passage-time laws, counter-based edge variates and the coupling modes.

Every law is stored as a *base* quantile plus a monotone conversion
``to_time`` from summed base values to times.  For scale families
(exponential, deterministic, uniform on [0, b]) the conversion is a single
division or multiplication, so travel times of all members of the family
are computed from one and the same floating-point path sum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import _kernels

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
AXIS_SALT = 0xD1B54A32D192ED03
STREAM_SALT = 0xC2B2AE3D27D4EB4F

FAMILIES = ("exponential", "uniform", "shifted_exponential", "deterministic")

# bond percolation thresholds on Z^d and oriented thresholds; only the
# rigorous/standard ones are defaults, everything else is user supplied
DEFAULT_PC = {1: 1.0, 2: 0.5}
DEFAULT_DIRPC = {1: 1.0, 2: 0.6447}


class CouplingMode(enum.Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"

    def stream(self, species: int) -> int:
        if species not in (1, 2):
            raise ValueError("species must be 1 or 2")
        return 0 if self is CouplingMode.SHARED else species - 1


# ---------------------------------------------------------------------------
# Counter-based uniforms


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _zigzag(c: int) -> int:
    return ((c << 1) ^ (c >> 63)) & MASK64 if c < 0 else (c << 1) & MASK64


@dataclass(frozen=True)
class EdgeSeedField:
    """Deterministic uniform u_e in [0, 1) for every edge of Z^d and stream.

    ``u`` is a hash of (master_seed, lower endpoint, axis, stream), so values
    never depend on the order in which edges are visited.  With
    ``mirror_axis=k`` an edge and its mirror image under x_k -> -x_k share
    their variates.
    """

    master_seed: int
    mirror_axis: int | None = None

    def __post_init__(self):
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def _stream_key(self, stream: int) -> int:
        return _mix((self.master_seed + GOLDEN * (stream + 1) + STREAM_SALT) & MASK64)

    def _canonical(self, lower: Sequence[int], axis: int) -> tuple[int, ...]:
        lower = [int(c) for c in lower]
        k = self.mirror_axis
        if k is not None:
            if axis == k:
                lower[k] = max(lower[k], -lower[k] - 1)
            else:
                lower[k] = abs(lower[k])
        return tuple(lower)

    def uniform(self, lower: Sequence[int], axis: int, stream: int = 0) -> float:
        """Variate of the edge {lower, lower + e_axis}."""
        h = self._stream_key(stream)
        for c in self._canonical(lower, axis):
            h = _mix(h ^ ((_zigzag(c) * GOLDEN) & MASK64))
        h = _mix(h ^ (((axis + 1) * AXIS_SALT) & MASK64))
        return (h >> 11) * 2.0**-53

    def uniforms(self, lower: np.ndarray, axis: int, stream: int = 0) -> np.ndarray:
        """Vectorised ``uniform`` for an (n, d) array of lower endpoints."""
        lower = np.array(lower, dtype=np.int64, ndmin=2)
        mirror = -1 if self.mirror_axis is None else self.mirror_axis
        return _kernels.edge_uniforms(np.uint64(self._stream_key(stream)), lower, axis, mirror)


def edge_key(a: Sequence[int], b: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """(lower endpoint, axis) of the edge {a, b}."""
    diff = [q - p for p, q in zip(a, b)]
    if sorted(map(abs, diff)) != [0] * (len(diff) - 1) + [1]:
        raise ValueError(f"{tuple(a)} and {tuple(b)} are not nearest neighbours")
    axis = next(k for k, v in enumerate(diff) if v)
    lower = tuple(a) if diff[axis] == 1 else tuple(b)
    return lower, axis


# ---------------------------------------------------------------------------
# Laws


def _exact(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(str(v))


@dataclass(frozen=True)
class PassageLaw:
    """A law on [0, inf) with an optional atom of mass ``zero_atom`` at 0.

    Parameters are kept as exact fractions (parsed from decimal strings) so
    that order and tie questions are decided analytically.
    """

    family: str
    params: tuple[tuple[str, Fraction], ...]
    zero_atom: Fraction = Fraction(0)
    p: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        pr = dict(self.params)
        need = {
            "exponential": {"rate"},
            "uniform": {"a", "b"},
            "shifted_exponential": {"shift", "rate"},
            "deterministic": {"c"},
        }[self.family]
        if set(pr) != need:
            raise ValueError(f"{self.family} needs parameters {sorted(need)}, got {sorted(pr)}")
        if "rate" in pr and pr["rate"] <= 0:
            raise ValueError("rate must be > 0")
        if self.family == "uniform" and not 0 <= pr["a"] < pr["b"]:
            raise ValueError("uniform needs 0 <= a < b")
        if self.family == "shifted_exponential" and pr["shift"] < 0:
            raise ValueError("shift must be >= 0")
        if self.family == "deterministic" and pr["c"] <= 0:
            raise ValueError("deterministic time must be > 0")
        if not 0 <= self.zero_atom < 1:
            raise ValueError("zero_atom must lie in [0, 1)")

    # construction -----------------------------------------------------------

    @classmethod
    def make(cls, family: str, *, zero_atom=0, p=None, **params) -> "PassageLaw":
        exact = tuple(sorted((k, _exact(v)) for k, v in params.items()))
        return cls(family, exact, _exact(zero_atom), p)

    @classmethod
    def exponential(cls, rate="1", **kw):
        kw.setdefault("p", float(_exact(rate)))
        return cls.make("exponential", rate=rate, **kw)

    @classmethod
    def uniform(cls, a="0", b="1", **kw):
        return cls.make("uniform", a=a, b=b, **kw)

    @classmethod
    def shifted_exponential(cls, shift="0", rate="1", **kw):
        return cls.make("shifted_exponential", shift=shift, rate=rate, **kw)

    @classmethod
    def deterministic(cls, c="1", **kw):
        return cls.make("deterministic", c=c, **kw)

    @classmethod
    def from_config(cls, cfg: Mapping) -> "PassageLaw":
        cfg = dict(cfg)
        family = cfg.pop("family")
        zero_atom = cfg.pop("zero_atom", "0")
        p = cfg.pop("p", None)
        return cls.make(family, zero_atom=zero_atom, p=None if p is None else float(p), **cfg)

    def to_config(self) -> dict:
        out = {"family": self.family}
        out.update({k: _fmt(v) for k, v in self.params})
        if self.zero_atom:
            out["zero_atom"] = _fmt(self.zero_atom)
        if self.p is not None:
            out["p"] = repr(self.p)
        return out

    def __str__(self):
        args = ", ".join(f"{k}={_fmt(v)}" for k, v in self.params)
        atom = f", zero_atom={_fmt(self.zero_atom)}" if self.zero_atom else ""
        return f"{self.family}({args}{atom})"

    # parameters ---------------------------------------------------------------

    def param(self, name: str) -> Fraction:
        return dict(self.params)[name]

    @property
    def continuous(self) -> bool:
        return self.family != "deterministic" and self.zero_atom == 0

    @property
    def canonical(self) -> tuple:
        """Hashable identity of the law as a measure."""
        if self.family == "shifted_exponential" and self.param("shift") == 0:
            return ("exponential", (("rate", self.param("rate")),), self.zero_atom)
        return (self.family, self.params, self.zero_atom)

    def same_law(self, other: "PassageLaw") -> bool:
        return self.canonical == other.canonical

    # quantiles -------------------------------------------------------------

    def base_quantile(self, u: np.ndarray) -> np.ndarray:
        """Base values whose image under ``to_time`` is the generalized inverse CDF."""
        u = np.asarray(u, dtype=np.float64)
        kind, atom, p1, p2 = self.kernel_params[:4]
        return _kernels.base_values(u.reshape(-1), kind, atom, p1, p2).reshape(u.shape)

    @property
    def kernel_params(self) -> tuple[int, float, float, float, bool, float]:
        """(kind, zero atom, p1, p2, divide?, scale) as consumed by the compiled race."""
        f = self.family
        if f == "exponential":
            p1 = p2 = 0.0
        elif f == "uniform":
            p1, p2 = float(self.param("a")), float(self.param("b"))
        elif f == "shifted_exponential":
            p1, p2 = float(self.param("shift")), float(self.param("rate"))
        else:
            p1 = p2 = 0.0
        op, k = self._scale
        return FAMILIES.index(f), float(self.zero_atom), p1, p2, op == "div", k

    @property
    def _scale(self) -> tuple[str, float]:
        f = self.family
        if f == "exponential":
            return "div", float(self.param("rate"))
        if f == "deterministic":
            return "mul", float(self.param("c"))
        if f == "uniform" and self.param("a") == 0:
            return "mul", float(self.param("b"))
        return "mul", 1.0

    def to_time(self, s):
        """Convert a (summed) base value to time; monotone non-decreasing."""
        op, k = self._scale
        if op == "div":
            return s / k
        return s * k

    def time_converter(self):
        """A fast scalar closure equivalent to ``to_time``."""
        op, k = self._scale
        if op == "div":
            return lambda s: s / k
        if k == 1.0:
            return lambda s: s
        return lambda s: s * k

    def quantile(self, u: float) -> float:
        if not 0.0 <= u < 1.0:
            raise ValueError("u must lie in [0, 1)")
        return float(self.to_time(self.base_quantile(np.array([u]))[0]))

    def quantiles(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if np.any((u < 0) | (u >= 1)):
            raise ValueError("u must lie in [0, 1)")
        return self.to_time(self.base_quantile(u))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        f = self.family
        if f == "exponential":
            c = np.where(x < 0, 0.0, -np.expm1(-float(self.param("rate")) * np.maximum(x, 0)))
        elif f == "uniform":
            lo, hi = float(self.param("a")), float(self.param("b"))
            c = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        elif f == "shifted_exponential":
            s, r = float(self.param("shift")), float(self.param("rate"))
            c = np.where(x < s, 0.0, -np.expm1(-r * np.maximum(x - s, 0)))
        else:
            c = np.where(x < float(self.param("c")), 0.0, 1.0)
        a = float(self.zero_atom)
        if a > 0:
            c = np.where(x < 0, 0.0, a + (1 - a) * c)
        return c

    def mean(self) -> float:
        f = self.family
        if f == "exponential":
            m = 1 / float(self.param("rate"))
        elif f == "uniform":
            m = float(self.param("a") + self.param("b")) / 2
        elif f == "shifted_exponential":
            m = float(self.param("shift")) + 1 / float(self.param("rate"))
        else:
            m = float(self.param("c"))
        return (1 - float(self.zero_atom)) * m

    # support facts used by the assumption report ------------------------

    @property
    def inf_support(self) -> Fraction:
        if self.zero_atom > 0:
            return Fraction(0)
        f = self.family
        if f == "uniform":
            return self.param("a")
        if f == "shifted_exponential":
            return self.param("shift")
        if f == "deterministic":
            return self.param("c")
        return Fraction(0)

    @property
    def mass_at_inf_support(self) -> Fraction:
        if self.zero_atom > 0:
            return self.zero_atom
        return Fraction(1) if self.family == "deterministic" else Fraction(0)

    @property
    def atoms(self) -> set[Fraction]:
        out = set()
        if self.zero_atom > 0:
            out.add(Fraction(0))
        if self.family == "deterministic":
            out.add(self.param("c"))
        return out


def _fmt(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    # terminating decimals print exactly; others fall back to a ratio
    den = v.denominator
    for q in (2, 5):
        while den % q == 0:
            den //= q
    if den == 1:
        from decimal import Decimal, getcontext

        getcontext().prec = 60
        return format(Decimal(v.numerator) / Decimal(v.denominator), "f")
    return f"{v.numerator}/{v.denominator}"


# ---------------------------------------------------------------------------
# Stochastic order


def _base_dominates(slow: PassageLaw, fast: PassageLaw) -> bool:
    """Quantile of ``slow`` >= quantile of ``fast`` on [0, 1), ignoring atoms at 0."""
    fs, ff = slow.family, fast.family

    def as_shift(law):
        if law.family == "exponential":
            return Fraction(0), law.param("rate")
        if law.family == "shifted_exponential":
            return law.param("shift"), law.param("rate")
        return None

    ss, sf = as_shift(slow), as_shift(fast)
    if ss and sf:
        return ss[0] >= sf[0] and ss[1] <= sf[1]
    if ss and ff == "uniform":
        shift, rate = ss
        a, b = fast.param("a"), fast.param("b")
        if shift < a:
            return False
        # g(u) = shift - a + E(u)/rate - (b - a) u is convex, g(0) = shift - a
        width, lam = float(b - a), float(rate)
        if lam * width <= 1:
            return True
        u_star = 1 - 1 / (lam * width)
        g = float(shift - a) + (-math.log1p(-u_star)) / lam - width * u_star
        return g >= 0
    if ss and ff == "deterministic":
        return ss[0] >= fast.param("c")
    if fs == "uniform":
        if ff == "uniform":
            return slow.param("a") >= fast.param("a") and slow.param("b") >= fast.param("b")
        if ff == "deterministic":
            return slow.param("a") >= fast.param("c")
        return False
    if fs == "deterministic":
        if ff == "deterministic":
            return slow.param("c") >= fast.param("c")
        if ff == "uniform":
            return slow.param("c") >= fast.param("b")
        return False
    return False


def dominates(slow: PassageLaw, fast: PassageLaw) -> bool:
    """Analytic test of ``slow`` >- ``fast`` through pointwise quantile order.

    Conservative: returns False when the order is not established by the
    sufficient conditions implemented here.
    """
    if slow.same_law(fast):
        return True
    if slow.zero_atom > fast.zero_atom:
        return False
    return _base_dominates(slow, fast)


def check_ordered_family(laws: Sequence[PassageLaw]) -> None:
    """Raise unless laws[0] >- laws[1] >- ... (slowest first)."""
    for a, b in zip(laws, laws[1:]):
        if not dominates(a, b):
            raise ValueError(f"{a} does not stochastically dominate {b}")


# ---------------------------------------------------------------------------
# Edge times


def edge_time(
    field: EdgeSeedField,
    edge: tuple[Sequence[int], Sequence[int]],
    law: PassageLaw,
    species: int,
    mode: CouplingMode = CouplingMode.SHARED,
) -> float:
    """Passage time of ``law`` across ``edge`` for the given species and coupling mode."""
    lower, axis = edge_key(*edge)
    u = field.uniforms(np.array([lower]), axis, mode.stream(species))
    return float(law.to_time(law.base_quantile(u)[0]))


def edge_times(
    field: EdgeSeedField, lower: np.ndarray, axis: int, law: PassageLaw, stream: int
) -> np.ndarray:
    return law.to_time(law.base_quantile(field.uniforms(lower, axis, stream)))


# ---------------------------------------------------------------------------
# Assumptions


@dataclass(frozen=True)
class AssumptionReport:
    h1_ordered: bool
    h2_no_ties: bool | None
    h3_atom_below_pc: bool | None
    h4_support_atom_below_dirpc: bool | None
    h5_exp_moment: bool
    pc_value_used: float | None
    dirpc_value_used: float | None

    @property
    def all_pass(self) -> bool:
        return all(
            v is True
            for v in (
                self.h1_ordered,
                self.h2_no_ties,
                self.h3_atom_below_pc,
                self.h4_support_atom_below_dirpc,
                self.h5_exp_moment,
            )
        )

    def failures(self) -> list[str]:
        names = ["h1_ordered", "h2_no_ties", "h3_atom_below_pc", "h4_support_atom_below_dirpc", "h5_exp_moment"]
        return [n for n in names if getattr(self, n) is not True]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _no_ties(law1: PassageLaw, law2: PassageLaw) -> bool:
    # sums of k >= 1 and l >= 1 draws can only tie on their atomic parts;
    # atoms of a k-fold sum are sums of atoms, and all parameters are rational
    a1, a2 = law1.atoms, law2.atoms
    if not a1 or not a2:
        return True
    if 0 in a1 and 0 in a2:
        return False
    pos1 = any(x > 0 for x in a1)
    pos2 = any(x > 0 for x in a2)
    return not (pos1 and pos2)


def validate_assumptions(
    law1: PassageLaw,
    law2: PassageLaw,
    d: int,
    pc: float | None = None,
    dirpc: float | None = None,
) -> AssumptionReport:
    """Decide (H1)-(H5) for species 1 (slow) and species 2 (fast) analytically."""
    pc = DEFAULT_PC.get(d) if pc is None else pc
    dirpc = DEFAULT_DIRPC.get(d) if dirpc is None else dirpc
    h1 = dominates(law1, law2) and not law1.same_law(law2)
    h2 = _no_ties(law1, law2)

    def below(masses, threshold):
        if all(m == 0 for m in masses):
            return True
        if threshold is None:
            return None
        return all(float(m) < threshold for m in masses)

    h3 = below([law1.zero_atom, law2.zero_atom], pc)
    h4 = below([law1.mass_at_inf_support, law2.mass_at_inf_support], dirpc)
    # every implemented family has a finite exponential moment
    h5 = True
    return AssumptionReport(h1, h2, h3, h4, h5, pc, dirpc)


def derive_seed(base_seed: int, index: int) -> int:
    """Replica seed ``index`` of ``base_seed``; distinct indices give distinct seeds."""
    return _mix((base_seed * GOLDEN + index + 1) & MASK64)
