"""Scenario files: YAML in dBm / dB / degree units, converted to SystemConfig."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..model import Angles, SystemConfig, db_to_linear, dbm_to_watt

ALGORITHMS = ("ao", "pdl", "exhaustive", "coc", "cris-ao", "cris-pdl", "mle", "verify", "rate", "sensors")
PHASE_NAMES = {1: "R", 2: "T"}

# sweep names that are not SystemConfig fields
PARTITION_SWEEPS = ("N1", "N2")


class SpecError(ValueError):
    """Malformed or infeasible scenario description."""


@dataclass
class Variant:
    label: str
    config: SystemConfig
    N1: int | None = None
    algorithms: tuple = ()
    raw: dict = field(default_factory=dict)


@dataclass
class ExperimentSpec:
    scenario: str
    variants: list
    sweep_name: str | None
    sweep_values: list
    algorithms: tuple
    phases: tuple = (1, 2)
    seeds: tuple = tuple(range(100))
    out: str | None = None
    options: dict = field(default_factory=dict)
    system_raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sweep_values:
            raise SpecError("sweep values must be nonempty")
        for v in self.sweep_values:
            if v is not None and not math.isfinite(float(v)):
                raise SpecError(f"non-finite sweep value {v!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise SpecError("seeds must be distinct")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise SpecError(f"unknown algorithm {a!r}")


_SYSTEM_KEYS = {
    "M_t", "M_r", "K", "K1", "N", "N_v", "T", "noise_dbm", "L0_db", "alpha_comm", "alpha_sense", "kappa",
    "P_U_max_dbm", "P_BS_max_dbm", "R_qos", "user_distances", "target_angles_deg", "target_rcs", "target_distance",
}


def system_from_dict(d: dict) -> SystemConfig:
    """Build a SystemConfig from boundary units (dBm, dB, degrees)."""
    unknown = set(d) - _SYSTEM_KEYS
    if unknown:
        raise SpecError(f"unknown system keys: {sorted(unknown)}")
    kw = {}
    for k in ("M_t", "M_r", "K", "K1", "N", "N_v", "T"):
        if k in d:
            kw[k] = int(d[k])
    for k in ("alpha_comm", "alpha_sense", "kappa", "R_qos", "target_distance"):
        if k in d:
            kw[k] = float(d[k])
    if "noise_dbm" in d:
        kw["sigma2"] = float(dbm_to_watt(d["noise_dbm"]))
    if "L0_db" in d:
        kw["L0"] = float(db_to_linear(d["L0_db"]))
    if "P_U_max_dbm" in d:
        kw["P_U_max"] = float(dbm_to_watt(d["P_U_max_dbm"]))
    if "P_BS_max_dbm" in d:
        kw["P_BS_max"] = float(dbm_to_watt(d["P_BS_max_dbm"]))
    K = kw.get("K", SystemConfig.K)
    if "user_distances" in d:
        dist = d["user_distances"]
        kw["user_distances"] = tuple(float(x) for x in (dist if isinstance(dist, list) else [dist] * K))
    elif K != len(SystemConfig.user_distances):
        kw["user_distances"] = (20.0,) * K
    if "target_angles_deg" in d:
        kw["target_angles"] = tuple(Angles.from_degrees(float(a), float(e)) for a, e in d["target_angles_deg"])
    if d.get("target_rcs") is not None:
        kw["target_rcs"] = tuple(complex(x) for x in d["target_rcs"])
    if "K1" not in kw:
        kw["K1"] = max(1, K // 2)
    try:
        return SystemConfig(**kw)
    except ValueError as exc:
        raise SpecError(str(exc)) from exc


def apply_sweep(config: SystemConfig, system_raw: dict, name: str | None, value, N1: int | None):
    """Return (config, N1) at one sweep point."""
    if name is None:
        return config, N1
    if name == "N1":
        return config, int(value)
    if name == "N2":
        return config, config.N - int(value)
    raw = dict(system_raw)
    if name not in _SYSTEM_KEYS:
        raise SpecError(f"cannot sweep {name!r}")
    raw[name] = value
    return system_from_dict(raw), N1


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_seeds(text) -> tuple:
    """``10`` -> 0..9, ``3:7`` -> 3..6, ``1,4,9`` -> those seeds."""
    if isinstance(text, int):
        return tuple(range(text))
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    text = str(text).strip()
    if ":" in text:
        a, b = text.split(":")
        return tuple(range(int(a), int(b)))
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s.strip())
    return tuple(range(int(text)))


def _phase(p) -> int:
    return {"R": 1, "r": 1, "1": 1, 1: 1, "T": 2, "t": 2, "2": 2, 2: 2}[p]


def spec_from_dict(doc: dict, profile: str = "full") -> ExperimentSpec:
    if profile not in ("full", "ci"):
        raise SpecError(f"unknown profile {profile!r}")
    if profile == "ci":
        doc = _merge({k: v for k, v in doc.items() if k != "profiles"}, (doc.get("profiles") or {}).get("ci", {}))
    scenario = str(doc.get("scenario", "unnamed"))
    system_raw = dict(doc.get("system") or {})
    algorithms = tuple(doc.get("algorithms") or ())
    N1 = (doc.get("partition") or {}).get("N1")
    variants = []
    for label, over in (doc.get("variants") or {"base": {}}).items():
        over = over or {}
        raw = _merge(system_raw, over.get("system") or {})
        v_N1 = (over.get("partition") or {}).get("N1", N1)
        variants.append(Variant(str(label), system_from_dict(raw), None if v_N1 is None else int(v_N1), tuple(over.get("algorithms") or ()), raw))
    sweep = doc.get("sweep") or {}
    sweep_name = sweep.get("name")
    values = list(sweep.get("values") or [None])
    phases = tuple(_phase(p) for p in doc.get("phases", ["R", "T"]))
    all_algos = set(algorithms)
    for v in variants:
        all_algos |= set(v.algorithms)
    if not all_algos:
        raise SpecError("no algorithm selected")
    bad = all_algos - set(ALGORITHMS)
    if bad:
        raise SpecError(f"unknown algorithm(s) {sorted(bad)}")
    return ExperimentSpec(
        scenario=scenario,
        variants=variants,
        sweep_name=sweep_name,
        sweep_values=values,
        algorithms=algorithms,
        phases=phases,
        seeds=parse_seeds(doc.get("seeds", 100)),
        options=dict(doc.get("options") or {}),
        system_raw=system_raw,
    )


def bundled_scenarios() -> list[str]:
    root = resources.files(__package__) / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_document(name_or_path: str) -> dict:
    p = Path(name_or_path)
    if p.exists():
        text = p.read_text()
    else:
        res = resources.files(__package__) / "scenarios" / f"{name_or_path}.yaml"
        if not res.is_file():
            raise SpecError(f"no scenario file or bundled scenario named {name_or_path!r}")
        text = res.read_text()
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise SpecError("scenario file must hold a mapping")
    return doc


def load_spec(name_or_path: str, profile: str = "full") -> ExperimentSpec:
    return spec_from_dict(load_document(name_or_path), profile)
