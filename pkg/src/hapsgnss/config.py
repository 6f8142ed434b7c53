"""Scenario configuration and its TOML representation.

Every field has a default reproducing the suburban campaign; a TOML file
only needs the keys it overrides.  Unknown keys are rejected so typos
surface as :class:`ConfigError` with the offending path.
"""

from dataclasses import dataclass, field, replace
import math

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .atmosphere import AtmosphereModel, KlobucharCoefficients, Meteo
from .errors import BelowMask, ConfigError
from .frames import GeodeticPosition, geodetic_to_ecef
from .orbits import DEFAULT_HAPS_HEIGHT, ConstellationSpec, HapsPlatform, HAPS, SATELLITE, \
    haps_from_elevation_azimuth
from .raim import FIRST_ITERATION, RECOMPUTE, RaimConfig
from .scenario import DENSE_URBAN, OPEN, SUBURBAN, EnvironmentModel, SynthesisSettings, \
    environment_preset
from .solver import SolverConfig

# elevation/azimuth of the six platforms seen from the trajectory start [deg]
TABLE_I = (
    ("HAPS1", 81.087, -14.210),
    ("HAPS2", 24.054, -128.878),
    ("HAPS3", 27.952, 68.022),
    ("HAPS4", 32.450, 171.477),
    ("HAPS5", 36.554, 2.204),
    ("HAPS6", 33.805, -57.884),
)

# Carleton University to Rideau Street, Ottawa
DEFAULT_WAYPOINTS = (
    (0.0, GeodeticPosition.from_degrees(45.3856, -75.6960, 70.0)),
    (700.0, GeodeticPosition.from_degrees(45.4270, -75.6920, 70.0)),
)
DEFAULT_START = 345_600.0  # Thursday 00:00 GPS time of week


def table_i_platforms(anchor, height=DEFAULT_HAPS_HEIGHT, orbit_radius=300.0, period=600.0):
    return [haps_from_elevation_azimuth(anchor, math.radians(el), math.radians(az), height,
                                        id=name, orbit_radius=orbit_radius,
                                        angular_rate=2.0 * math.pi / period)
            for name, el, az in TABLE_I]


@dataclass
class ReceiverConfig:
    waypoints: tuple = DEFAULT_WAYPOINTS
    clock_offset: float = 0.0            # [s]
    clock_drift: float = 0.0             # [s/s]
    clock_estimation_noise: float = 0.0  # [m], HAPS pseudoranges only

    @property
    def anchor(self):
        return self.waypoints[0][1]

    def position(self, t):
        """Truth ECEF position at ``t`` seconds after the scenario start."""
        times = [w[0] for w in self.waypoints]
        pts = [geodetic_to_ecef(w[1]) for w in self.waypoints]
        if len(pts) == 1 or t <= times[0]:
            return pts[0]
        for k in range(1, len(times)):
            if t <= times[k]:
                f = (t - times[k - 1]) / (times[k] - times[k - 1])
                return pts[k - 1] + f * (pts[k] - pts[k - 1])
        return pts[-1]

    def clock(self, t):
        return self.clock_offset + self.clock_drift * t


@dataclass
class ScenarioConfig:
    constellation: ConstellationSpec = field(default_factory=ConstellationSpec)
    haps: list = None
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    start_time: float = DEFAULT_START
    epoch_interval: float = 1.0
    n_epochs: int = 700
    elevation_mask: float = math.radians(15.0)
    environments: dict = None
    schedule: tuple = ((0.0, SUBURBAN),)
    los_applies_to: tuple = (HAPS,)
    dense_urban_sat_cap: int = 4
    cn0_jitter_std: float = 1.0
    meteo: Meteo = field(default_factory=Meteo)
    klobuchar: KlobucharCoefficients = field(default_factory=KlobucharCoefficients)
    raim: RaimConfig = field(default_factory=RaimConfig)
    seed: int = 0

    def __post_init__(self):
        if self.haps is None:
            self.haps = table_i_platforms(self.receiver.anchor)
        if self.environments is None:
            self.environments = {n: environment_preset(n) for n in (SUBURBAN, DENSE_URBAN, OPEN)}
        if not 0.0 <= self.elevation_mask <= math.radians(30.0) + 1e-12:
            raise ConfigError("elevation_mask_deg", "must lie in [0, 30] degrees")
        if self.epoch_interval <= 0.0:
            raise ConfigError("epoch_interval_s", "must be positive")
        if self.n_epochs < 0:
            raise ConfigError("n_epochs", "must be non-negative")
        for k, (_, name) in enumerate(self.schedule):
            if name not in self.environments:
                raise ConfigError(f"environment.schedule[{k}]", f"unknown environment {name!r}")

    def environment_at(self, t):
        """Environment in force ``t`` seconds after the start."""
        current = self.schedule[0][1]
        for start, name in self.schedule:
            if t >= start:
                current = name
        return self.environments[current]

    @property
    def atmosphere(self):
        return AtmosphereModel(self.klobuchar, self.meteo)

    def synthesis_settings(self):
        return SynthesisSettings(
            elevation_mask=self.elevation_mask, los_applies_to=tuple(self.los_applies_to),
            dense_urban_sat_cap=self.dense_urban_sat_cap, cn0_jitter_std=self.cn0_jitter_std,
            clock_estimation_noise=self.receiver.clock_estimation_noise,
            atmosphere=self.atmosphere)

    def solver_config(self):
        return SolverConfig(elevation_mask=self.elevation_mask)


# -- TOML -------------------------------------------------------------------

class _Section:
    """Typed accessor over one TOML table that tracks consumed keys."""

    def __init__(self, table, path):
        if not isinstance(table, dict):
            raise ConfigError(path, "expected a table")
        self.table = table
        self.path = path
        self.used = set()

    def _key(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, default, kind=float):
        self.used.add(key)
        if key not in self.table:
            return default
        value = self.table[key]
        try:
            if kind is float:
                if isinstance(value, bool):
                    raise TypeError
                value = float(value)
                if not math.isfinite(value):
                    raise ValueError
            elif kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                value = int(value)
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind is list:
                if not isinstance(value, list):
                    raise TypeError
        except (TypeError, ValueError):
            raise ConfigError(self._key(key), f"expected {kind.__name__}, got {value!r}") from None
        return value

    def sub(self, key):
        self.used.add(key)
        return _Section(self.table.get(key, {}), self._key(key))

    def check(self, allowed_tables=()):
        extra = set(self.table) - self.used - set(allowed_tables)
        if extra:
            raise ConfigError(self._key(sorted(extra)[0]), "unknown key")


def _floats(section, key, default, length):
    values = section.get(key, list(default), list)
    if len(values) != length:
        raise ConfigError(section._key(key), f"expected {length} numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(section._key(key), "expected numbers") from None


def _environment(section, name, errors_tau, errors_sigma):
    base = environment_preset(name)
    env = EnvironmentModel(
        name=name,
        los_k=section.get("los_k_per_deg", base.los_k),
        los_el50=section.get("los_el50_deg", base.los_el50),
        sat_error_tau=section.get("sat_gm_tau_s", errors_tau),
        sat_error_sigma=section.get("sat_gm_sigma_m", errors_sigma),
        haps_error_std=section.get("haps_error_std_m", base.haps_error_std),
    )
    section.check()
    if env.sat_error_tau <= 0.0 or env.sat_error_sigma < 0.0 or env.haps_error_std < 0.0:
        raise ConfigError(section.path, "error parameters must be non-negative (tau positive)")
    return env


def config_from_dict(data):
    root = _Section(data, "")
    c = root.sub("constellation")
    constellation = ConstellationSpec(
        n_planes=c.get("n_planes", 6, int),
        sats_per_plane=c.get("sats_per_plane", 5, int),
        semi_major_axis=c.get("semi_major_axis_m", 26_560_000.0),
        inclination=math.radians(c.get("inclination_deg", 55.0)),
        phasing=c.get("phasing", 1, int),
        raan0=math.radians(c.get("raan0_deg", 0.0)),
        clock_offsets=tuple(float(v) for v in c.get("clock_offsets_s", [], list)),
    )
    c.check()
    if constellation.n_planes < 1 or constellation.sats_per_plane < 1:
        raise ConfigError("constellation", "need at least one plane and one satellite")

    r = root.sub("receiver")
    raw_wp = r.get("waypoints", None, list)
    if raw_wp is None:
        waypoints = DEFAULT_WAYPOINTS
    else:
        try:
            waypoints = tuple((float(t), GeodeticPosition.from_degrees(lat, lon, h))
                              for t, lat, lon, h in raw_wp)
        except (TypeError, ValueError):
            raise ConfigError("receiver.waypoints",
                              "expected [[t_s, lat_deg, lon_deg, height_m], ...]") from None
        if not waypoints or any(b[0] <= a[0] for a, b in zip(waypoints, waypoints[1:])):
            raise ConfigError("receiver.waypoints", "timestamps must be strictly increasing")
    receiver = ReceiverConfig(
        waypoints=waypoints,
        clock_offset=r.get("clock_offset_s", 0.0),
        clock_drift=r.get("clock_drift", 0.0),
        clock_estimation_noise=r.get("clock_estimation_noise_m", 0.0),
    )
    r.check()

    e = root.sub("errors")
    tau = e.get("sat_gm_tau_s", 10.0)
    sigma = e.get("sat_gm_sigma_m", 6.0)
    meteo = Meteo(e.get("pressure_hpa", 1013.25), e.get("temperature_k", 288.15),
                  e.get("relative_humidity", 0.5))
    default_k = KlobucharCoefficients()
    klob = KlobucharCoefficients(_floats(e, "klobuchar_alpha", default_k.alpha, 4),
                                 _floats(e, "klobuchar_beta", default_k.beta, 4))
    e.check()

    env = root.sub("environment")
    environments = {
        SUBURBAN: _environment(env.sub(SUBURBAN), SUBURBAN, tau, sigma),
        DENSE_URBAN: _environment(env.sub(DENSE_URBAN), DENSE_URBAN, tau, sigma),
        OPEN: _environment(env.sub(OPEN), OPEN, tau, sigma),
    }
    raw_schedule = env.get("schedule", [[0.0, SUBURBAN]], list)
    try:
        schedule = tuple((float(t), str(name)) for t, name in raw_schedule)
    except (TypeError, ValueError):
        raise ConfigError("environment.schedule", "expected [[t_s, name], ...]") from None
    los_to = tuple(env.get("los_applies_to", [HAPS], list))
    for kind in los_to:
        if kind not in (HAPS, SATELLITE):
            raise ConfigError("environment.los_applies_to", f"unknown source kind {kind!r}")
    cap = env.get("dense_urban_sat_cap", 4, int)
    jitter = env.get("cn0_jitter_db", 1.0)
    env.check()

    anchor = receiver.anchor
    platforms = []
    raw_haps = root.table.get("haps", None)
    root.used.add("haps")
    if raw_haps is None:
        platforms = None
    else:
        if not isinstance(raw_haps, list):
            raise ConfigError("haps", "expected an array of tables [[haps]]")
        for k, item in enumerate(raw_haps):
            h = _Section(item, f"haps[{k}]")
            hid = h.get("id", f"HAPS{k + 1}", str)
            height = h.get("height_m", DEFAULT_HAPS_HEIGHT)
            radius = h.get("orbit_radius_m", 300.0)
            period = h.get("period_s", 600.0)
            clock = h.get("clock_offset_s", 0.0)
            try:
                if "elevation_deg" in item:
                    el = h.get("elevation_deg", 0.0)
                    az = h.get("azimuth_deg", 0.0)
                    p = haps_from_elevation_azimuth(anchor, math.radians(el), math.radians(az),
                                                    height, id=hid, orbit_radius=radius,
                                                    angular_rate=2.0 * math.pi / period,
                                                    clock_offset=clock)
                else:
                    center = GeodeticPosition.from_degrees(h.get("lat_deg", 0.0),
                                                           h.get("lon_deg", 0.0), height)
                    p = HapsPlatform(hid, center, radius, 2.0 * math.pi / period,
                                     math.radians(h.get("phase0_deg", 0.0)), clock)
            except (ValueError, ArithmeticError, BelowMask) as exc:
                raise ConfigError(f"haps[{k}]", str(exc)) from None
            h.check()
            platforms.append(p)

    rc = root.sub("raim")
    danish = rc.table.get("danish_T", "critical")
    rc.used.add("danish_T")
    if danish != "critical" and (isinstance(danish, bool) or not isinstance(danish, (int, float))
                                 or danish <= 0):
        raise ConfigError("raim.danish_T", 'expected "critical" or a positive number')
    mode = rc.get("residual_std_mode", RECOMPUTE, str)
    if mode not in (RECOMPUTE, FIRST_ITERATION):
        raise ConfigError("raim.residual_std_mode", f"expected {RECOMPUTE!r} or {FIRST_ITERATION!r}")
    alpha0 = rc.get("alpha0", 0.005)
    if not 0.0 < alpha0 < 1.0:
        raise ConfigError("raim.alpha0", "must lie in (0, 1)")
    raim = RaimConfig(alpha0=alpha0, danish_T=danish, residual_std_mode=mode)
    rc.check()

    kwargs = dict(
        constellation=constellation, haps=platforms, receiver=receiver,
        start_time=root.get("start_time_s", DEFAULT_START),
        epoch_interval=root.get("epoch_interval_s", 1.0),
        n_epochs=root.get("n_epochs", 700, int),
        elevation_mask=math.radians(root.get("elevation_mask_deg", 15.0)),
        environments=environments, schedule=schedule, los_applies_to=los_to,
        dense_urban_sat_cap=cap, cn0_jitter_std=jitter, meteo=meteo, klobuchar=klob,
        raim=raim, seed=root.get("seed", 0, int),
    )
    root.check(allowed_tables=("haps",))
    return ScenarioConfig(**kwargs)


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    except OSError as exc:
        raise ConfigError(str(path), str(exc)) from None
    return config_from_dict(data)


def with_environment(cfg, name):
    """Copy of ``cfg`` running the whole campaign in one environment."""
    return replace(cfg, schedule=((0.0, name),))
