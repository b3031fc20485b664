"""Experiment configuration shared by the MaxEnt loop, the harness and the CLI."""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

from .exceptions import DomainError
from .gibbs import IMPUTATIONS, SIGMA2_SHAPES, PriorSpec

POLICIES = ("maxent-fully-bayes", "maxent-empirical-bayes", "uniform", "balanced-then-uniform")


@dataclass(frozen=True)
class ChainSettings:
    T: int = 10_000
    burn_in: Optional[int] = None
    thin: int = 1
    imputation: str = "smg"
    sigma2_shape: str = "rank"

    def __post_init__(self):
        if self.T < 1 or self.thin < 1:
            raise DomainError("chain length T and thin must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise DomainError("burn_in must be >= 0")
        if self.imputation not in IMPUTATIONS:
            raise DomainError(f"imputation must be one of {IMPUTATIONS}")
        if self.sigma2_shape not in SIGMA2_SHAPES:
            raise DomainError(f"sigma2_shape must be one of {SIGMA2_SHAPES}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Dimensions, priors, budgets, chain settings and seeds of one experiment.

    ``policies`` lists every sampling policy compared on a shared ground
    truth; each must be one of :data:`POLICIES`.
    """

    m1: int = 7
    m2: int = 7
    true_rank: int = 2
    sigma2: float = 1.0
    eta2: float = 1e-4
    priors: PriorSpec = field(default_factory=PriorSpec)
    n_ini: int = 7
    n_seq: int = 28
    batch_size: int = 1
    chain: ChainSettings = field(default_factory=lambda: ChainSettings(T=1000))
    policies: Tuple[str, ...] = ("maxent-empirical-bayes", "uniform")
    replications: int = 10
    seed: int = 0
    dataset: Optional[str] = None
    keep_fraction: Optional[float] = None
    lam: Optional[float] = None
    design_draws: int = 100

    def __post_init__(self):
        if isinstance(self.policies, str):
            object.__setattr__(self, "policies", (self.policies,))
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.m1 < 2 or self.m2 < 2:
            raise DomainError("matrix dimensions must be >= 2")
        if self.dataset is None and not 1 <= self.true_rank < min(self.m1, self.m2):
            raise DomainError("true_rank must satisfy 1 <= R < min(m1, m2)")
        if not (self.sigma2 > 0 and self.eta2 > 0):
            raise DomainError("sigma2 and eta2 must be positive")
        for p in self.policies:
            if p not in POLICIES:
                raise DomainError(f"unknown policy {p!r}; choose from {POLICIES}")
        if self.n_ini < 1 or self.n_seq < 0 or self.batch_size < 1:
            raise DomainError("need n_ini >= 1, n_seq >= 0, batch_size >= 1")
        if any(p.startswith("maxent") or p.startswith("balanced") for p in self.policies):
            if self.n_ini < max(self.m1, self.m2):
                raise DomainError(
                    f"balanced and maxent policies need n_ini >= max(m1, m2) = {max(self.m1, self.m2)}"
                )
        if self.n_ini + self.n_seq > self.m1 * self.m2:
            raise DomainError("n_ini + n_seq exceeds the number of matrix entries")
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.keep_fraction is not None and not 0 < self.keep_fraction <= 1:
            raise DomainError("keep_fraction must lie in (0, 1]")
        if self.design_draws < 1:
            raise DomainError("design_draws must be >= 1")

    @property
    def screening_fraction(self):
        if self.keep_fraction is not None:
            return self.keep_fraction
        return 0.25 if self.m1 * self.m2 > 10_000 else 1.0

    def to_dict(self):
        out = asdict(self)
        out["priors"] = self.priors.to_dict()
        out["policies"] = list(self.policies)
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(data.get("priors"), dict):
            pri = dict(data["priors"])
            if "rank_prior" in pri:
                pri["rank_prior"] = tuple(pri["rank_prior"])
            data["priors"] = PriorSpec(**pri)
        if isinstance(data.get("chain"), dict):
            data["chain"] = ChainSettings(**data["chain"])
        if "policies" in data:
            pol = data["policies"]
            data["policies"] = (pol,) if isinstance(pol, str) else tuple(pol)
        return cls(**data)

    def with_updates(self, **changes):
        return replace(self, **changes)
