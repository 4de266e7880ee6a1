"""Tunable parameters shared by the validator, the search and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

NOMINAL_HZ = 60.0


@dataclass(frozen=True)
class Params:
    # objective weights
    alpha_cl: float = 10.0
    alpha_nl: float = 1.0
    # cold-load pickup staircase, oldest-last
    beta: tuple[float, float, float] = (1.0, 0.6, 0.3)

    # frequency security (Hz); "any" limits apply to f, QSS limits to the droop value
    sync_eps: float = 0.05
    f_min: float = 59.5
    f_max: float = 60.5
    f_qss_min: float = 59.5
    f_qss_max: float = 60.5
    default_droop: float = 0.2  # Hz per p.u. of BESS rating
    rocof_gain: float = 1.0  # Hz/s per p.u. of rating picked up
    rocof_max: float = 1.0
    nadir_gain: float = 1.0  # Hz per p.u. of rating picked up
    nadir_min: float = 59.0
    mu_offset: float = 0.0
    strict_frequency_separation: bool = False

    # squared-voltage band, applied to every energized bus
    v_min: float = 0.95
    v_max: float = 1.05
    v_root: float = 1.0

    soc_min: float = 0.2
    soc_max: float = 1.0

    pv_delay: int = 1
    tol: float = 1e-6
    cap_tol: float = 1e-6

    # feasibility-resolution threshold
    root_threshold: float = 0.5

    # search budget
    max_nodes: int = 100_000
    max_seconds: float = 60.0

    seed: int = 42

    @property
    def v_min_sq(self) -> float:
        return self.v_min**2

    @property
    def v_max_sq(self) -> float:
        return self.v_max**2

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["beta"] = list(self.beta)
        return out

    def updated(self, **overrides: Any) -> "Params":
        known = {f.name for f in fields(self)}
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - known
        if unknown:
            raise KeyError(f"unknown parameter(s): {sorted(unknown)}")
        if "beta" in clean:
            clean["beta"] = tuple(float(b) for b in clean["beta"])
            if len(clean["beta"]) != 3:
                raise ValueError("beta needs exactly three coefficients")
        return replace(self, **clean)


DEFAULT_PARAMS = Params()


def load_params(path: str | Path | None = None, **overrides: Any) -> Params:
    """Built-in defaults, then a JSON config file, then explicit overrides."""
    params = DEFAULT_PARAMS
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            params = params.updated(**json.load(fh))
    return params.updated(**overrides)


@dataclass(frozen=True)
class RuleSet:
    """Which restoration policy a plan is checked (or searched) under.

    ``ssdmgf`` enforces the pairwise-merge safety rule, ``ndmgf`` drops it, and
    ``rr`` keeps it while also locking every SSW open until the TG returns.
    """

    name: str = "ssdmgf"
    sync_safety: bool = True
    ssw_lockout: bool = False
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def named(cls, name: str) -> "RuleSet":
        key = name.lower()
        if key == "ssdmgf":
            return cls("ssdmgf", sync_safety=True, ssw_lockout=False)
        if key == "ndmgf":
            return cls("ndmgf", sync_safety=False, ssw_lockout=False)
        if key == "rr":
            return cls("rr", sync_safety=True, ssw_lockout=True)
        raise ValueError(f"unknown rule set {name!r} (expected ssdmgf, ndmgf or rr)")


SSDMGF = RuleSet.named("ssdmgf")
NDMGF = RuleSet.named("ndmgf")
RR = RuleSet.named("rr")
