"""Every tunable knob in one place.

Values that come from public safety literature are fixed defaults; values the
underlying sources leave open are plain config fields so scenarios can
override them. All dataclasses are frozen: a config object can be shared
freely between concurrent simulations.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any

# One simulation round advances wall-clock time by this many seconds.
ROUND_SECONDS = 2.5


@dataclass(frozen=True)
class FireConfig:
    # t-squared design fire: Q = alpha * t^2, capped.
    peak_kw: float = 1055.0
    radiative_fraction: float = 0.35
    # Seconds for each growth class to reach peak_kw.
    growth_class_seconds: dict[str, float] = field(
        default_factory=lambda: {"slow": 600.0, "medium": 300.0, "fast": 150.0, "ultrafast": 75.0}
    )
    severity_class: dict[str, str] = field(
        default_factory=lambda: {"LOW": "slow", "MEDIUM": "medium", "HIGH": "ultrafast"}
    )
    # Radiant flux bands, kW/m^2. The outermost band doubles as the visible radius.
    flux_bands: tuple[float, float, float] = (2.5, 5.0, 10.0)
    # Rounds of exposure before wounding: 30 s at 5 kW/m^2, 10 s at 10 kW/m^2.
    wound_rounds_band_5: int = 12
    wound_rounds_band_10: int = 4
    # Post-onset per-round fatality roll (escalation surrogate).
    post_onset_fatality_p: float = 0.25


@dataclass(frozen=True)
class BombConfig:
    # Mandatory-evacuation standoff distances, metres.
    visible_radius: dict[str, float] = field(
        default_factory=lambda: {"LOW": 21.0, "MEDIUM": 34.0, "HIGH": 46.0}
    )
    # Charge mass (lb) per severity; lethal radii anchored at LOW and HIGH.
    charge_lb: dict[str, float] = field(
        default_factory=lambda: {"LOW": 5.0, "MEDIUM": 20.0, "HIGH": 50.0}
    )
    lethal_anchor_low: tuple[float, float] = (5.0, 8.0)  # (lb, metres)
    lethal_anchor_high: tuple[float, float] = (50.0, 12.0)
    # Rounds from spawn until detonation.
    fuse_rounds: int = 4


@dataclass(frozen=True)
class ShooterConfig:
    magazine_size: int = 30
    rounds_per_minute: float = 45.0
    reload_rounds: int = 2
    phase_rounds: int = 2
    walk_speed: float = 1.2
    run_speed: float = 3.0
    heading_jitter_deg: float = 15.0
    max_range: float = 50.0
    # Piecewise-linear hit / fatality curves over distance (metres).
    p_hit_near: tuple[float, float] = (5.0, 0.65)
    p_hit_far: tuple[float, float] = (50.0, 0.10)
    p_fatal_near: tuple[float, float] = (10.0, 0.50)
    p_fatal_far: tuple[float, float] = (50.0, 0.20)
    suppression_factor: float = 0.5


@dataclass(frozen=True)
class PoliceConfig:
    speed: float = 2.0
    engage_radius: float = 6.4
    p_neutralize: float = 0.35
    p_officer_down: float = 0.05


@dataclass(frozen=True)
class LightningConfig:
    # Flashes per minute by severity (band midpoints; HIGH is the open "12+" band).
    rate_per_min: dict[str, float] = field(
        default_factory=lambda: {"LOW": 2.0, "MEDIUM": 7.5, "HIGH": 15.0}
    )
    strike_radius: float = 30.5
    p_fatal: float = 0.10


@dataclass(frozen=True)
class HazmatConfig:
    # Concentration at the outer visible contour.
    idlh_ppm: float = 10.0
    idlh_radius: dict[str, float] = field(
        default_factory=lambda: {"LOW": 15.0, "MEDIUM": 30.0, "HIGH": 50.0}
    )
    cough_ppm: float = 30.0
    cough_speed_factor: float = 0.8
    oedema_ppm: float = 40.0
    oedema_onset_rounds: int = 720  # 30 min at 2.5 s/round
    acute_ppm: float = 330.0
    acute_onset_rounds: int = 120  # 5 min
    post_onset_fatality_p: float = 0.25


@dataclass(frozen=True)
class StampedeConfig:
    onset_density: float = 3.6  # persons/m^2
    saturation_density: float = 6.0
    p_base: float = 0.02
    severity_multiplier: dict[str, float] = field(
        default_factory=lambda: {"LOW": 0.5, "MEDIUM": 1.0, "HIGH": 2.0}
    )
    cascade_factor: float = 1.5
    duration_rounds: int = 4
    crush_fatality_p: float = 0.01
    cell_size: float = 1.0  # density-grid resolution, metres


@dataclass(frozen=True)
class CrowdConfig:
    """Fundamental diagram, social-force repulsion, and steering blend."""

    v_free: float = 1.34  # m/s
    rho_jam: float = 5.4  # persons/m^2
    gamma: float = 1.913
    rho_crit: float = 1.75  # named in the parameter set; no formula uses it yet
    speed_floor: float = 0.1
    wounded_factor: float = 0.4
    reduced_mobility_factor: float = 0.7
    coordinator_relief_factor: float = 1.15
    slowdown_onset_area: float = 2.32  # m^2/person
    slowdown_floor_area: float = 0.465
    # Social-force repulsion A*exp((2r-d)/B); tau/lambda/k_body/kappa_friction
    # are carried for completeness but not used by the steering blend.
    sf_A: float = 2000.0
    sf_B: float = 0.08
    agent_radius: float = 0.3
    sf_tau: float = 0.5
    sf_lambda: float = 0.5
    k_body: float = 1.2e5
    kappa_friction: float = 2.4e5
    neighbor_radius: float = 1.6  # repulsion cutoff, metres
    # Steering blend weights (renormalized at use).
    w_flow: float = 0.55
    w_direct: float = 0.15
    w_repulse: float = 0.20
    w_threat: float = 0.10
    velocity_smoothing: float = 0.5  # EMA alpha per round
    stuck_rounds_override: int = 3
    density_radius: float = 1.0  # local-density sampling radius
    cell_capacity: int = 4  # congestion stabilizer cap per walkable cell


@dataclass(frozen=True)
class DeliberationConfig:
    max_discussion_rounds: int = 3
    history_window: int = 6
    chat_window: int = 10
    visual_radius: float = 5.0
    coordinator_influence_radius: float = 3.7
    coordinator_reset_p: float = 0.5
    match_similarity_threshold: float = 0.6
    batch_size: int = 32
    concurrency: int = 8
    request_timeout: float = 10.0


@dataclass(frozen=True)
class EngineConfig:
    dt: float = ROUND_SECONDS
    default_rounds: int = 150
    arrival_tolerance: float = 0.5
    cell_size: float = 0.5
    aisle_weight: float = 1.0
    seat_row_weight: float = 5.0
    awareness_factor: float = 1.5  # awareness zone = factor * visible radius


@dataclass(frozen=True)
class SyncConfig:
    heartbeat_seconds: float = 15.0
    missed_heartbeats_reap: int = 3
    autoplay_interval: float = 0.05


@dataclass(frozen=True)
class SimConfig:
    fire: FireConfig = field(default_factory=FireConfig)
    bomb: BombConfig = field(default_factory=BombConfig)
    shooter: ShooterConfig = field(default_factory=ShooterConfig)
    police: PoliceConfig = field(default_factory=PoliceConfig)
    lightning: LightningConfig = field(default_factory=LightningConfig)
    hazmat: HazmatConfig = field(default_factory=HazmatConfig)
    stampede: StampedeConfig = field(default_factory=StampedeConfig)
    crowd: CrowdConfig = field(default_factory=CrowdConfig)
    deliberation: DeliberationConfig = field(default_factory=DeliberationConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    """Build a SimConfig from a (possibly partial) nested dict of overrides."""
    sections: dict[str, Any] = {}
    for f in fields(SimConfig):
        overrides = data.get(f.name, {})
        base = f.default_factory()  # type: ignore[misc]
        if overrides:
            base = dataclasses.replace(base, **overrides)
        sections[f.name] = base
    return SimConfig(**sections)
