"""Experiment configuration, canonical hashing and object builders."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError
from ..kernels.families import family_from_descriptor
from ..measures import GridDensity, SpeciesSet, truncated_gaussian
from ..regularize import DeltaSchedule, regularize

KINDS = ("convergence", "reg_compare", "gamma_regime", "kernel_verify", "relax_demo")

DEFAULTS = {
    "convergence": {
        "kernel": {"family": "log"},
        "regularizers": [{"reg_family": "mollified"}],
        "n_ladder": [64, 256, 1024, 4096],
        "tolerance": 0.05,
    },
    "reg_compare": {
        "kernel": {"family": "log"},
        "regularizers": [{"reg_family": "mollified"}, {"reg_family": "cutoff"}],
        "n_ladder": [64, 256, 1024, 4096],
        "tolerance": 2.0,
    },
    "gamma_regime": {
        "kernel": {"family": "log"},
        "regularizers": [{"reg_family": "mollified"}],
        "n_ladder": [100, 178, 316, 562, 1000, 1778, 3162, 5623, 10000, 17783, 31623, 56234, 100000],
        "tolerance": 0.05,
        "extras": {"schedules": [{"rule": "power", "c": 1.0, "exponent": 0.5},
                                 {"rule": "exponential", "c": 1.0, "exponent": 1.0}],
                   "gamma_floor": 0.5},
    },
    "kernel_verify": {
        "kernel": {"family": "edge"},
        "regularizers": [],
        "n_ladder": [1],
        "tolerance": 1e-8,
    },
    "relax_demo": {
        "kernel": {"family": "log"},
        "regularizers": [],
        "n_ladder": [1],
        "h": 1 / 16,
        "tolerance": 1e-10,
        "extras": {"cases": ["singleton", "antipodal"]},
    },
}

# fields that do not change results and are left out of the hash
_UNHASHED = ("out", "threads")


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's output."""

    kind: str
    kernel: dict = field(default_factory=lambda: {"family": "log"})
    regularizers: list = field(default_factory=lambda: [{"reg_family": "mollified"}])
    schedule: dict = field(default_factory=lambda: {"rule": "power", "c": 1.0, "exponent": 0.5})
    n_ladder: list = field(default_factory=lambda: [64, 256, 1024, 4096])
    box: list = field(default_factory=lambda: [-1.0, 1.0, -1.0, 1.0])
    h: float = 1 / 64
    density: dict = field(default_factory=lambda: {"kind": "truncated_gaussian", "sigma": 0.35})
    seed: int = 0
    tolerance: float = 0.05
    jitter: float = 0.10
    extras: dict = field(default_factory=dict)
    out: str = "out"
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        lad = [int(n) for n in self.n_ladder]
        if not lad or any(b <= a for a, b in zip(lad, lad[1:])) or lad[0] < 1:
            raise DomainError("n ladder must be a nonempty strictly increasing list of positive integers")
        self.n_ladder = lad
        x0, x1, y0, y1 = (float(v) for v in self.box)
        if not (x1 > x0 and y1 > y0):
            raise DomainError("box must be non-degenerate")
        self.box = [x0, x1, y0, y1]
        self.h = float(self.h)
        if not self.h > 0:
            raise DomainError("grid resolution must be positive")
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        DeltaSchedule.from_dict(self.schedule)  # validates

    @classmethod
    def from_dict(cls, d, kind=None):
        d = copy.deepcopy(dict(d))
        kind = kind or d.get("kind")
        if kind is None:
            raise DomainError("configuration needs a 'kind'")
        kind = kind.replace("-", "_")
        merged = copy.deepcopy(DEFAULTS.get(kind, {}))
        extras = merged.pop("extras", {})
        extras.update(d.pop("extras", {}))
        merged.update(d)
        merged["kind"] = kind
        merged["extras"] = extras
        known = set(cls.__dataclass_fields__)
        unknown = set(merged) - known
        if unknown:
            raise DomainError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**merged)

    @classmethod
    def load(cls, path, kind=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), kind)

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def hashed_dict(self):
        return {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}

    @property
    def config_hash(self):
        return canonical_hash(self.hashed_dict())

    @property
    def delta_schedule(self):
        return DeltaSchedule.from_dict(self.schedule)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def canonical_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# builders

def build_base(desc):
    return family_from_descriptor(desc)


def build_species(base):
    """Species set matching a base family: Burgers angles for edge kernels,
    the charge-matrix rows for two-component radial kernels, else equally
    spaced angles."""
    S = base.species_count
    if hasattr(base, "angles"):
        return SpeciesSet.from_angles(base.angles)
    Q = getattr(base, "charge_matrix", None)
    if Q is not None and Q.shape[1] == 2 and np.allclose(np.hypot(Q[:, 0], Q[:, 1]), 1.0):
        return SpeciesSet(tuple(map(tuple, Q.tolist())))
    return SpeciesSet.from_angles([2 * math.pi * s / S for s in range(S)])


def build_density(cfg, species):
    spec = dict(cfg.density)
    kind = spec.pop("kind", "truncated_gaussian")
    weights = spec.pop("weights", None)
    if kind == "truncated_gaussian":
        return truncated_gaussian(tuple(cfg.box), cfg.h, sigma=float(spec.pop("sigma", 0.35)), species=species,
                                  weights=weights)
    if kind == "uniform":
        x0, x1, y0, y1 = cfg.box
        nx, ny = round((x1 - x0) / cfg.h), round((y1 - y0) / cfg.h)
        w = np.full(species.S, 1.0 / species.S) if weights is None else np.asarray(weights, float) / np.sum(weights)
        vals = w[:, None, None] * np.ones((species.S, ny, nx))
        return GridDensity.normalized(tuple(cfg.box), cfg.h, vals, species, {"density": "uniform"})
    raise DomainError(f"unknown density kind {kind!r}")


def reg_label(desc):
    extra = "".join(f",{k}={desc[k]}" for k in sorted(desc) if k != "reg_family")
    return desc["reg_family"] + extra


def build_regularizer(base, desc, schedule, n):
    kw = {k: v for k, v in desc.items() if k != "reg_family"}
    li = schedule.log_inv_delta(n)
    if desc["reg_family"] == "mollified":
        kw["log_delta"] = -li
    return regularize(base, desc["reg_family"], math.exp(-li), **kw)
