"""Market instances: public values, tier structure, latent noise, interview ledger."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MASK64 = (1 << 64) - 1

# streams for the counter-based noise derivation, one per latent matrix
_STREAM_EPS_A = 0
_STREAM_EPS_P = 1
_STREAM_ETA_A = 2
_STREAM_ETA_P = 3

# above this side size the full noise matrices are not precomputed
LAZY_BACKEND_THRESHOLD = 20_000

_P0 = 0x9E3779B97F4A7C15
_P1 = 0xC2B2AE3D27D4EB4F
_P2 = 0x165667B19E3779F9


class ConfigError(ValueError):
    """Raised for malformed market or algorithm configuration."""


def _mix64_scalar(z: int) -> int:
    z = (z + _P0) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_P0)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _unit_double_scalar(seed: int, stream: int, i: int, j: int) -> float:
    base = _mix64_scalar((seed * _P1 + stream) & MASK64)
    w = _mix64_scalar((base + i * _P1 + j * _P2) & MASK64)
    return float(w >> 11) * 2.0**-53


def _unit_double_matrix(seed: int, stream: int, rows: int, cols: int) -> np.ndarray:
    base = _mix64_scalar((seed * _P1 + stream) & MASK64)
    ii = (np.arange(rows, dtype=np.uint64) * np.uint64(_P1))[:, None]
    jj = (np.arange(cols, dtype=np.uint64) * np.uint64(_P2))[None, :]
    with np.errstate(over="ignore"):
        w = _mix64_array(np.uint64(base) + ii + jj)
    return (w >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class NoiseModel:
    """A bounded symmetric zero-mean noise family on [-half_width, half_width]."""

    family: str = "uniform"
    half_width: float = 1.0

    _FAMILIES = ("uniform", "triangular")

    def __post_init__(self) -> None:
        if self.family not in self._FAMILIES:
            raise ConfigError(
                f"noise family must be one of {self._FAMILIES}, got {self.family!r}"
            )
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ConfigError(f"half_width must be positive, got {self.half_width}")

    def transform_scalar(self, r: float) -> float:
        c = self.half_width
        if self.family == "uniform":
            return (2.0 * r - 1.0) * c
        if r < 0.5:
            return c * (math.sqrt(2.0 * r) - 1.0)
        return c * (1.0 - math.sqrt(2.0 * (1.0 - r)))

    def transform_array(self, r: np.ndarray) -> np.ndarray:
        c = self.half_width
        if self.family == "uniform":
            return (2.0 * r - 1.0) * c
        lo = c * (np.sqrt(2.0 * r) - 1.0)
        hi = c * (1.0 - np.sqrt(2.0 * (1.0 - r)))
        return np.where(r < 0.5, lo, hi)

    def to_dict(self) -> dict:
        return {"family": self.family, "half_width": self.half_width}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(family=d.get("family", "uniform"), half_width=float(d.get("half_width", 1.0)))


@dataclass(frozen=True)
class TierStructure:
    """Tier boundaries 0 = t_0 < t_1 < ... < t_K = size; tier l holds indices [t_l, t_{l+1})."""

    boundaries: tuple[int, ...]

    def __post_init__(self) -> None:
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0:
            raise ConfigError(f"tier boundaries must start at 0: {b}")
        if any(b[k] >= b[k + 1] for k in range(len(b) - 1)):
            raise ConfigError(f"tier boundaries must be strictly increasing: {b}")

    @property
    def size(self) -> int:
        return self.boundaries[-1]

    @property
    def tier_count(self) -> int:
        return len(self.boundaries) - 1

    def tier_of(self, index: int) -> int:
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} out of range for size {self.size}")
        # boundaries is short; linear scan keeps this trivially correct
        for l in range(self.tier_count):
            if index < self.boundaries[l + 1]:
                return l
        raise AssertionError("unreachable")

    def members(self, tier: int) -> range:
        return range(self.boundaries[tier], self.boundaries[tier + 1])

    def is_all_singletons(self) -> bool:
        return self.tier_count == self.size

    @classmethod
    def single(cls, size: int) -> "TierStructure":
        return cls((0, size))

    @classmethod
    def singletons(cls, size: int) -> "TierStructure":
        return cls(tuple(range(size + 1)))


@dataclass(frozen=True)
class UtilityModel:
    """Noise families plus the value separation between adjacent tiers."""

    epsilon: NoiseModel = NoiseModel()
    eta_enabled: bool = False
    eta: NoiseModel = NoiseModel()
    tier_gap: float = 10.0

    def __post_init__(self) -> None:
        span = self.epsilon.half_width + (self.eta.half_width if self.eta_enabled else 0.0)
        if not self.tier_gap > 2.0 * span:
            raise ConfigError(
                f"tier_gap {self.tier_gap} must exceed twice the total noise span {span}"
            )

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon.to_dict(),
            "eta": {"enabled": self.eta_enabled, **self.eta.to_dict()},
            "tier_gap": self.tier_gap,
        }


@dataclass(frozen=True)
class ValueGenerator:
    """Public-value generator: strictly decreasing with a spacing, or tier-constant."""

    kind: str = "strict"
    spacing: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("strict", "tiered"):
            raise ConfigError(f"value_generator kind must be 'strict' or 'tiered', got {self.kind!r}")
        if self.kind == "strict" and not self.spacing > 0:
            raise ConfigError("strict value spacing must be positive")

    def values(self, tiers: TierStructure, tier_gap: float) -> np.ndarray:
        size = tiers.size
        if self.kind == "strict":
            return (np.arange(size - 1, -1, -1, dtype=np.float64)) * self.spacing
        levels = np.array([tiers.tier_of(i) for i in range(size)], dtype=np.float64)
        return (tiers.tier_count - 1 - levels) * tier_gap

    def to_dict(self) -> dict:
        return {"kind": self.kind, "spacing": self.spacing}


@dataclass(frozen=True)
class MarketShape:
    """The non-latent part of a market: sizes and tier structures only."""

    n: int
    m: int
    applicant_tiers: TierStructure
    position_tiers: TierStructure

    def __post_init__(self) -> None:
        if self.applicant_tiers.size != self.n:
            raise ConfigError("applicant tier boundaries do not end at n")
        if self.position_tiers.size != self.m:
            raise ConfigError("position tier boundaries do not end at m")


@dataclass(frozen=True)
class MarketConfig:
    """Everything needed (besides a seed) to sample a market instance."""

    n: int
    m: int
    applicant_tiers: TierStructure
    position_tiers: TierStructure
    utility: UtilityModel = UtilityModel()
    values: ValueGenerator = ValueGenerator()

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigError("market sides must be non-empty")
        if self.applicant_tiers.size != self.n:
            raise ConfigError(
                f"applicant tiers cover {self.applicant_tiers.size} agents, expected {self.n}"
            )
        if self.position_tiers.size != self.m:
            raise ConfigError(
                f"position tiers cover {self.position_tiers.size} agents, expected {self.m}"
            )
        if self.values.kind == "strict":
            if not (self.applicant_tiers.is_all_singletons() and self.position_tiers.is_all_singletons()):
                raise ConfigError("strict value generator requires singleton tiers on both sides")

    @property
    def shape(self) -> MarketShape:
        return MarketShape(self.n, self.m, self.applicant_tiers, self.position_tiers)

    @classmethod
    def strict(cls, n: int, m: Optional[int] = None, spacing: float = 1.0, **kwargs) -> "MarketConfig":
        """Distinct public values with the given spacing; singleton tiers."""
        m = n if m is None else m
        return cls(
            n=n,
            m=m,
            applicant_tiers=TierStructure.singletons(n),
            position_tiers=TierStructure.singletons(m),
            values=ValueGenerator("strict", spacing),
            **kwargs,
        )

    @classmethod
    def tiered(
        cls,
        applicant_boundaries: tuple[int, ...],
        position_boundaries: tuple[int, ...],
        tier_gap: Optional[float] = None,
        **kwargs,
    ) -> "MarketConfig":
        a = TierStructure(tuple(applicant_boundaries))
        p = TierStructure(tuple(position_boundaries))
        if tier_gap is not None:
            base = kwargs.pop("utility", UtilityModel())
            kwargs["utility"] = UtilityModel(
                epsilon=base.epsilon,
                eta_enabled=base.eta_enabled,
                eta=base.eta,
                tier_gap=tier_gap,
            )
        return cls(
            n=a.size, m=p.size, applicant_tiers=a, position_tiers=p,
            values=ValueGenerator("tiered"), **kwargs,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "applicant_tiers": list(self.applicant_tiers.boundaries),
            "position_tiers": list(self.position_tiers.boundaries),
            **self.utility.to_dict(),
            "value_generator": self.values.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        eta_d = dict(d.get("eta", {}))
        eta_enabled = bool(eta_d.pop("enabled", False))
        utility = UtilityModel(
            epsilon=NoiseModel.from_dict(d.get("epsilon", {})),
            eta_enabled=eta_enabled,
            eta=NoiseModel.from_dict(eta_d) if eta_d else NoiseModel(),
            tier_gap=float(d.get("tier_gap", 10.0)),
        )
        vg = d.get("value_generator", {})
        return cls(
            n=int(d["n"]),
            m=int(d["m"]),
            applicant_tiers=TierStructure(tuple(d["applicant_tiers"])),
            position_tiers=TierStructure(tuple(d["position_tiers"])),
            utility=utility,
            values=ValueGenerator(vg.get("kind", "strict"), float(vg.get("spacing", 1.0))),
        )


class Market:
    """A fully sampled instance; latent noise exists even where never revealed.

    Immutable after construction. Values are non-increasing on both sides and
    indices are 0-based throughout.
    """

    def __init__(
        self,
        config: MarketConfig,
        seed: int,
        backend: str = "auto",
        _matrices: Optional[dict] = None,
    ):
        if backend not in ("auto", "dense", "lazy"):
            raise ConfigError(f"unknown backend {backend!r}")
        if backend == "auto":
            backend = "lazy" if max(config.n, config.m) > LAZY_BACKEND_THRESHOLD else "dense"
        self.config = config
        self.seed = int(seed)
        self.backend = backend
        self.n = config.n
        self.m = config.m
        self.applicant_tiers = config.applicant_tiers
        self.position_tiers = config.position_tiers
        self.eta_enabled = config.utility.eta_enabled

        gap = config.utility.tier_gap
        self.applicant_values = config.values.values(config.applicant_tiers, gap)
        self.position_values = config.values.values(config.position_tiers, gap)
        self.applicant_values.setflags(write=False)
        self.position_values.setflags(write=False)

        self._mat: dict[str, Optional[np.ndarray]] = {name: None for name in ("eps_a", "eps_p", "eta_a", "eta_p")}
        if _matrices is not None:
            for name, arr in _matrices.items():
                self._mat[name] = arr
        elif backend == "dense":
            self._mat["eps_a"] = self._derive("eps_a")
            self._mat["eps_p"] = self._derive("eps_p")
            if self.eta_enabled:
                self._mat["eta_a"] = self._derive("eta_a")
                self._mat["eta_p"] = self._derive("eta_p")
        for arr in self._mat.values():
            if arr is not None:
                arr.setflags(write=False)

    _STREAMS = {"eps_a": _STREAM_EPS_A, "eps_p": _STREAM_EPS_P, "eta_a": _STREAM_ETA_A, "eta_p": _STREAM_ETA_P}

    def _noise_model(self, name: str) -> NoiseModel:
        return self.config.utility.epsilon if name.startswith("eps") else self.config.utility.eta

    def _dims(self, name: str) -> tuple[int, int]:
        return (self.n, self.m) if name.endswith("_a") else (self.m, self.n)

    def _derive(self, name: str) -> np.ndarray:
        rows, cols = self._dims(name)
        r = _unit_double_matrix(self.seed, self._STREAMS[name], rows, cols)
        return self._noise_model(name).transform_array(r)

    def _element(self, name: str, i: int, j: int) -> float:
        rows, cols = self._dims(name)
        if not (0 <= i < rows and 0 <= j < cols):
            raise IndexError(f"{name}[{i},{j}] out of range for {rows}x{cols}")
        mat = self._mat[name]
        if mat is not None:
            return float(mat[i, j])
        r = _unit_double_scalar(self.seed, self._STREAMS[name], i, j)
        return self._noise_model(name).transform_scalar(r)

    def _matrix(self, name: str) -> np.ndarray:
        if self._mat[name] is None:
            arr = self._derive(name)
            arr.setflags(write=False)
            self._mat[name] = arr
        return self._mat[name]

    # element accessors (work on both backends without materializing)
    def eps_applicant(self, a: int, p: int) -> float:
        return self._element("eps_a", a, p)

    def eps_position(self, p: int, a: int) -> float:
        return self._element("eps_p", p, a)

    def eta_applicant(self, a: int, p: int) -> float:
        return self._element("eta_a", a, p) if self.eta_enabled else 0.0

    def eta_position(self, p: int, a: int) -> float:
        return self._element("eta_p", p, a) if self.eta_enabled else 0.0

    # full matrices (materialized on demand under the lazy backend)
    @property
    def eps_a(self) -> np.ndarray:
        return self._matrix("eps_a")

    @property
    def eps_p(self) -> np.ndarray:
        return self._matrix("eps_p")

    @property
    def eta_a(self) -> Optional[np.ndarray]:
        return self._matrix("eta_a") if self.eta_enabled else None

    @property
    def eta_p(self) -> Optional[np.ndarray]:
        return self._matrix("eta_p") if self.eta_enabled else None

    @property
    def shape(self) -> MarketShape:
        return self.config.shape

    def to_dict(self) -> dict:
        """Serializable form with matrices row-major, for replay debugging."""
        d = {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "applicant_values": self.applicant_values.tolist(),
            "position_values": self.position_values.tolist(),
            "eps_a": self.eps_a.tolist(),
            "eps_p": self.eps_p.tolist(),
            "eta_a": self.eta_a.tolist() if self.eta_enabled else None,
            "eta_p": self.eta_p.tolist() if self.eta_enabled else None,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Market":
        config = MarketConfig.from_dict(d["config"])
        mats = {
            "eps_a": np.asarray(d["eps_a"], dtype=np.float64),
            "eps_p": np.asarray(d["eps_p"], dtype=np.float64),
        }
        if d.get("eta_a") is not None:
            mats["eta_a"] = np.asarray(d["eta_a"], dtype=np.float64)
            mats["eta_p"] = np.asarray(d["eta_p"], dtype=np.float64)
        market = cls(config, int(d["seed"]), backend="dense", _matrices=mats)
        # public values are derived from the config; stored ones must agree
        for key, derived in (
            ("applicant_values", market.applicant_values),
            ("position_values", market.position_values),
        ):
            if key in d and not np.array_equal(np.asarray(d[key], dtype=np.float64), derived):
                raise ConfigError(f"stored {key} disagree with the config's value generator")
        return market


def sample_market(config: MarketConfig, seed: int, backend: str = "auto") -> Market:
    """Sample all latent draws for a market; deterministic in (config, seed)."""
    return Market(config, seed, backend=backend)


class InterviewLedger:
    """Monotone append-only record of conducted interviews."""

    def __init__(self) -> None:
        self._seen: set[tuple[int, int]] = set()
        self.order: list[tuple[int, int]] = []

    def record(self, a: int, p: int) -> bool:
        """Add (a, p) if new; returns whether it was new."""
        key = (a, p)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.order.append(key)
        return True

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return pair in self._seen

    def __len__(self) -> int:
        return len(self.order)

    def pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset(self._seen)

    def counts(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-applicant and per-position interview counts."""
        a_counts = np.zeros(n, dtype=np.int64)
        p_counts = np.zeros(m, dtype=np.int64)
        for a, p in self.order:
            a_counts[a] += 1
            p_counts[p] += 1
        return a_counts, p_counts

    def to_dict(self) -> dict:
        return {"order": [list(pair) for pair in self.order]}

    @classmethod
    def from_dict(cls, d: dict) -> "InterviewLedger":
        ledger = cls()
        for a, p in d["order"]:
            ledger.record(int(a), int(p))
        return ledger


class Matching:
    """Partial one-to-one assignment; the two maps are kept mutually inverse."""

    def __init__(self) -> None:
        self.applicant_to_position: dict[int, int] = {}
        self.position_to_applicant: dict[int, int] = {}

    def match(self, a: int, p: int) -> None:
        if a in self.applicant_to_position:
            raise ValueError(f"applicant {a} already matched")
        if p in self.position_to_applicant:
            raise ValueError(f"position {p} already matched")
        self.applicant_to_position[a] = p
        self.position_to_applicant[p] = a

    def unmatch(self, a: int, p: int) -> None:
        if self.applicant_to_position.get(a) != p:
            raise ValueError(f"({a}, {p}) is not a matched pair")
        del self.applicant_to_position[a]
        del self.position_to_applicant[p]

    def position_of(self, a: int) -> Optional[int]:
        return self.applicant_to_position.get(a)

    def applicant_of(self, p: int) -> Optional[int]:
        return self.position_to_applicant.get(p)

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.applicant_to_position.items())

    def __len__(self) -> int:
        return len(self.applicant_to_position)

    def check_consistent(self) -> None:
        for a, p in self.applicant_to_position.items():
            if self.position_to_applicant.get(p) != a:
                raise ValueError(f"matching maps are not mutual inverses at ({a}, {p})")
        if len(self.position_to_applicant) != len(self.applicant_to_position):
            raise ValueError("matching maps have different sizes")

    def to_dict(self) -> dict:
        return {"pairs": [list(pair) for pair in self.pairs()]}

    @classmethod
    def from_dict(cls, d: dict) -> "Matching":
        mu = cls()
        for a, p in d["pairs"]:
            mu.match(int(a), int(p))
        return mu


def conduct_interview(
    ledger: InterviewLedger, market: Market, a: int, p: int
) -> tuple[float, float]:
    """Reveal (eps_a, eps_p) for the pair; idempotent on repeats."""
    if not (0 <= a < market.n and 0 <= p < market.m):
        raise IndexError(f"interview ({a}, {p}) out of range for {market.n}x{market.m}")
    ledger.record(a, p)
    return market.eps_applicant(a, p), market.eps_position(p, a)


def observed_utility_applicant(market: Market, ledger: InterviewLedger, a: int, p: int) -> float:
    """Applicant a's observed utility for position p under the current ledger."""
    v = float(market.position_values[p]) + market.eta_applicant(a, p)
    if (a, p) in ledger:
        v += market.eps_applicant(a, p)
    return v


def observed_utility_position(market: Market, ledger: InterviewLedger, p: int, a: int) -> float:
    """Position p's observed utility for applicant a under the current ledger."""
    u = float(market.applicant_values[a]) + market.eta_position(p, a)
    if (a, p) in ledger:
        u += market.eps_position(p, a)
    return u
