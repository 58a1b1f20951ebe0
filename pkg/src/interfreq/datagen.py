"""Synthetic multi-cell, multi-carrier LTE measurement generator.

Cells sit on a regular grid inside a square area and transmit on every
carrier (carrier 0 is the serving frequency, carriers 1..n_alt_freqs are the
alternative frequencies). Each observation draws a user position, log-normal
shadowing and per-cell loads, then derives RSRP, RSSI and RSRQ for every
cell and carrier. RSRQ always equals ``n_rb * RSRP / RSSI`` in linear units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import RSRP_RANGE_DBM, RSRQ_RANGE_DB, ConfigError, MeasurementRecord
from .ingest import GroupedDataset

PL0_DB = 38.0
SUBCARRIERS_PER_RB = 12
MAX_POSITION_DRAWS = 1000


@dataclass(frozen=True)
class LinearPower:
    """Power in watts."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"linear power must be positive, got {self.value}")

    @classmethod
    def from_dbm(cls, dbm: float) -> "LinearPower":
        return cls(dbm_to_watt(dbm))

    @property
    def dbm(self) -> float:
        return watt_to_dbm(self.value)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Radio scenario parameters.

    ``tx_power_dbm`` lists one total transmit power per carrier, serving
    carrier first; a single value is broadcast to every carrier.
    ``shadow_correlation`` is the share of shadowing variance common to all
    carriers of a cell. ``reference_fraction`` is the share of resource
    elements that carry reference symbols and are therefore always on, even
    in an idle cell.
    """

    n_cells: int = 7
    n_alt_freqs: int = 1
    area_m: float = 1500.0
    tx_power_dbm: Tuple[float, ...] = (46.0, 43.0)
    pathloss_exponent: float = 3.5
    shadowing_sigma_db: float = 8.0
    shadow_correlation: float = 0.9
    noise_dbm: float = -104.0
    n_rb: int = 50
    load_range: Tuple[float, float] = (0.1, 1.0)
    alt_load_range: Optional[Tuple[float, float]] = (0.7, 0.9)
    reference_fraction: float = 2.0 / 12.0
    detection_floor_dbm: float = -125.0
    n_observations: int = 4000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tx_power_dbm", tuple(float(v) for v in np.atleast_1d(self.tx_power_dbm)))
        object.__setattr__(self, "load_range", tuple(float(v) for v in self.load_range))
        if self.alt_load_range is not None:
            object.__setattr__(self, "alt_load_range", tuple(float(v) for v in self.alt_load_range))
        if self.n_cells < 2:
            raise ConfigError("n_cells must be >= 2")
        if self.n_alt_freqs < 1:
            raise ConfigError("n_alt_freqs must be >= 1")
        if self.n_rb < 1:
            raise ConfigError("n_rb must be >= 1")
        if self.area_m <= 0:
            raise ConfigError("area_m must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be >= 0")
        if not 0.0 <= self.shadow_correlation <= 1.0:
            raise ConfigError("shadow_correlation must lie in [0, 1]")
        if not 0.0 < self.reference_fraction <= 1.0:
            raise ConfigError("reference_fraction must lie in (0, 1]")
        for name in ("load_range", "alt_load_range"):
            rng = getattr(self, name)
            if rng is None:
                continue
            if len(rng) != 2 or not 0.0 <= rng[0] <= rng[1] <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= min <= max <= 1")
        if len(self.tx_power_dbm) not in (1, self.n_freqs):
            raise ConfigError(
                f"tx_power_dbm needs 1 or {self.n_freqs} entries, got {len(self.tx_power_dbm)}")
        if self.n_observations < 0:
            raise ConfigError("n_observations must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_freqs(self) -> int:
        return 1 + self.n_alt_freqs

    def tx_per_freq(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.tx_power_dbm), (self.n_freqs,)).astype(float)

    def load_bounds(self) -> np.ndarray:
        """(n_freqs, 2) array of per-carrier load intervals."""
        alt = self.alt_load_range if self.alt_load_range is not None else self.load_range
        return np.array([self.load_range] + [alt] * self.n_alt_freqs, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tx_power_dbm"] = list(self.tx_power_dbm)
        d["load_range"] = list(self.load_range)
        if self.alt_load_range is not None:
            d["alt_load_range"] = list(self.alt_load_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def rsrq_linear(rsrp: LinearPower, rssi: LinearPower, n_rb: int) -> float:
    """RSRQ as a linear ratio, ``n_rb * rsrp / rssi``."""
    rsrp_w = rsrp.value if isinstance(rsrp, LinearPower) else float(rsrp)
    rssi_w = rssi.value if isinstance(rssi, LinearPower) else float(rssi)
    if not rssi_w > 0:
        raise ValueError(f"RSSI must be positive, got {rssi_w}")
    return n_rb * rsrp_w / rssi_w


def rsrq_db(rsrp: LinearPower, rssi: LinearPower, n_rb: int) -> float:
    return 10.0 * math.log10(rsrq_linear(rsrp, rssi, n_rb))


def received_power(tx_dbm, distance_m, exponent, shadow_db, pl0_db: float = PL0_DB):
    """Log-distance received power in dBm; distances under 1 m count as 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    out = tx_dbm - (pl0_db + 10.0 * exponent * np.log10(d)) + shadow_db
    return float(out) if np.ndim(out) == 0 else out


def cell_sites(config: ScenarioConfig) -> np.ndarray:
    """Cell positions on a centred grid, row-major, shape (n_cells, 2)."""
    cols = math.ceil(math.sqrt(config.n_cells))
    rows = math.ceil(config.n_cells / cols)
    idx = np.arange(config.n_cells)
    x = (idx % cols + 0.5) * config.area_m / cols
    y = (idx // cols + 0.5) * config.area_m / rows
    return np.column_stack([x, y])


@dataclass(frozen=True)
class RadioSnapshot:
    """Per-carrier, per-cell linear quantities for one user position."""

    rsrp_w: np.ndarray  # (n_freqs, n_cells)
    rssi_w: np.ndarray  # (n_freqs,)

    @property
    def rsrp_dbm(self) -> np.ndarray:
        return watt_to_dbm(self.rsrp_w)

    def rsrq_db(self, n_rb: int) -> np.ndarray:
        return 10.0 * np.log10(n_rb * self.rsrp_w / self.rssi_w[:, None])


def radio_snapshot(config: ScenarioConfig, position, shadow_db, loads) -> RadioSnapshot:
    """Linear RSRP per cell/carrier and RSSI per carrier at ``position``.

    ``shadow_db`` and ``loads`` have shape (n_freqs, n_cells).
    """
    sites = cell_sites(config)
    dist = np.hypot(*(sites - np.asarray(position, dtype=float)).T)
    tx = config.tx_per_freq()[:, None]
    total_dbm = received_power(tx, dist[None, :], config.pathloss_exponent, shadow_db)
    total_w = dbm_to_watt(total_dbm)
    rsrp_w = total_w / (SUBCARRIERS_PER_RB * config.n_rb)
    rf = config.reference_fraction
    activity = rf + (1.0 - rf) * np.asarray(loads, dtype=float)
    rssi_w = (activity * total_w).sum(axis=1) + dbm_to_watt(config.noise_dbm)
    return RadioSnapshot(rsrp_w=rsrp_w, rssi_w=rssi_w)


@dataclass(frozen=True)
class GeneratedRecord:
    record: MeasurementRecord
    rssi_lin_serving: LinearPower
    rsrp_lin_serving: LinearPower
    rssi_lin_alt: LinearPower
    rsrp_lin_alt: LinearPower
    alt_freq_index: int

    def debug_columns(self) -> dict:
        return {
            "rssi_lin_serving": self.rssi_lin_serving.value,
            "rsrp_lin_serving": self.rsrp_lin_serving.value,
            "rssi_lin_alt": self.rssi_lin_alt.value,
            "rsrp_lin_alt": self.rsrp_lin_alt.value,
        }


def cell_id(i: int) -> str:
    return f"c{i + 1}"


def freq_id(a: int) -> str:
    return f"f{a}"


def record_from_snapshot(config: ScenarioConfig, snap: RadioSnapshot, alt: int) -> GeneratedRecord:
    """Turn a snapshot into the reported record for alternative carrier ``alt``."""
    rsrp_dbm = snap.rsrp_dbm
    rsrq = snap.rsrq_db(config.n_rb)
    # np.argmax returns the first maximum, so ties go to the lowest index
    j = int(np.argmax(snap.rsrp_w[0]))
    best_alt = int(np.argmax(rsrq[alt]))
    detected = (rsrp_dbm[0] >= config.detection_floor_dbm) & (rsrq[0] >= RSRQ_RANGE_DB[0])
    detected[j] = True
    rec = MeasurementRecord(
        group_key=(cell_id(j), freq_id(alt)),
        serving_index=j,
        rsrp=tuple(float(v) if ok else None for v, ok in zip(rsrp_dbm[0], detected)),
        rsrq=tuple(float(v) if ok else None for v, ok in zip(rsrq[0], detected)),
        y=float(rsrq[alt, best_alt]),
    )
    return GeneratedRecord(
        record=rec,
        rssi_lin_serving=LinearPower(float(snap.rssi_w[0])),
        rsrp_lin_serving=LinearPower(float(snap.rsrp_w[0, j])),
        rssi_lin_alt=LinearPower(float(snap.rssi_w[alt])),
        rsrp_lin_alt=LinearPower(float(snap.rsrp_w[alt, best_alt])),
        alt_freq_index=alt,
    )


def _serving_reportable(config: ScenarioConfig, snap_full_load: RadioSnapshot) -> bool:
    # judged at full load so that the accepted position does not depend on loads
    j = int(np.argmax(snap_full_load.rsrp_w[0]))
    p = snap_full_load.rsrp_dbm[0, j]
    q = snap_full_load.rsrq_db(config.n_rb)[0, j]
    return RSRP_RANGE_DBM[0] <= p <= RSRP_RANGE_DBM[1] and q >= RSRQ_RANGE_DB[0]


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for record ``index``; unaffected by the record count."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def simulate_record(config: ScenarioConfig, index: int) -> GeneratedRecord:
    rng = record_rng(config.seed, index)
    nf, nc = config.n_freqs, config.n_cells
    bounds = config.load_bounds()
    u = rng.random((nf, nc))
    loads = bounds[:, :1] + (bounds[:, 1:] - bounds[:, :1]) * u
    alt = int(rng.integers(1, nf)) if nf > 2 else 1
    rho = config.shadow_correlation
    full = np.ones((nf, nc))
    for _ in range(MAX_POSITION_DRAWS):
        position = rng.random(2) * config.area_m
        common = rng.standard_normal(nc)
        own = rng.standard_normal((nf, nc))
        shadow = config.shadowing_sigma_db * (math.sqrt(rho) * common[None, :] + math.sqrt(1.0 - rho) * own)
        if not _serving_reportable(config, radio_snapshot(config, position, shadow, full)):
            continue
        return record_from_snapshot(config, radio_snapshot(config, position, shadow, loads), alt)
    raise ConfigError(
        f"record {index}: no position with a reportable serving cell after "
        f"{MAX_POSITION_DRAWS} draws; check powers, area and noise")


def simulate(config: ScenarioConfig) -> List[GeneratedRecord]:
    """All records of a scenario, in record-index order."""
    return [simulate_record(config, i) for i in range(config.n_observations)]


def generate(config: ScenarioConfig) -> GroupedDataset:
    return GroupedDataset.from_records([g.record for g in simulate(config)], m=config.n_cells)
