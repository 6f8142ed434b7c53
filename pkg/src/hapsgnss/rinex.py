"""RINEX 2.11 / 3.0x GPS navigation and observation readers, and the HAPS
sidecar CSV that carries the extra ranging sources next to a real file.

The readers never stop at a bad record: each problem is collected with its
line number and parsing resumes at the next record.
"""

from dataclasses import dataclass, field
from datetime import datetime, timedelta
import csv
import io
import logging
import math
import re

import numpy as np

from .constants import C, GPS_WEEK_SECONDS
from .errors import MalformedEpoch, MalformedHeader, MalformedRecord, NoEphemeris, SchemaError, \
    TimestampMisaligned
from .orbits import EPHEMERIS_VALIDITY, HAPS, EphemerisRecord, SourceState, _wrap_week

log = logging.getLogger(__name__)

GPS_EPOCH = datetime(1980, 1, 6)
PSEUDORANGE_MIN, PSEUDORANGE_MAX = 1e6, 5e7   # plausible GPS code range [m]
SIDECAR_FIELDS = ("t_gps_s", "haps_id", "x_m", "y_m", "z_m", "pseudorange_m", "cn0_dbhz")

# broadcast-orbit lines after the clock line, per constellation letter
_NAV_ORBIT_LINES = {"G": 7, "E": 7, "C": 7, "J": 7, "I": 7, "R": 3, "S": 3}


def gps_time(year, month, day, hour=0, minute=0, second=0.0):
    """(week, seconds of week) of a GPS-time calendar epoch."""
    if year < 100:
        year += 2000 if year < 80 else 1900
    whole = int(math.floor(second))
    dt = datetime(year, month, day, hour, minute, whole) - GPS_EPOCH
    total = dt.days * 86400 + dt.seconds + (second - whole)
    week = int(total // GPS_WEEK_SECONDS)
    return week, total - week * GPS_WEEK_SECONDS


def gps_calendar(week, tow):
    return GPS_EPOCH + timedelta(seconds=week * GPS_WEEK_SECONDS + tow)


def _float(text):
    """Fortran-style real; blank fields read as zero."""
    s = text.strip()
    if not s:
        return 0.0
    return float(s.replace("D", "E").replace("d", "e"))


def _numbered(stream):
    text = stream.read() if hasattr(stream, "read") else str(stream)
    return list(enumerate(text.splitlines(), start=1))


def _split_header(lines, kind):
    """Header label -> list of (line number, content) and the body lines."""
    header = {}
    for k, (num, line) in enumerate(lines):
        label = line[60:].strip()
        header.setdefault(label, []).append((num, line[:60]))
        if label == "END OF HEADER":
            return header, lines[k + 1:]
    raise MalformedHeader(f"{kind} file has no END OF HEADER")


def _version(header, kind):
    entries = header.get("RINEX VERSION / TYPE")
    if not entries:
        raise MalformedHeader(f"{kind} file lacks RINEX VERSION / TYPE")
    num, content = entries[0]
    try:
        version = float(content[:9])
    except ValueError:
        raise MalformedHeader(f"line {num}: unreadable RINEX version") from None
    if not (2.0 <= version < 4.0):
        raise MalformedHeader(f"line {num}: unsupported RINEX version {version}")
    return version, content[20:21].upper(), content[40:41].upper()


# -- navigation -------------------------------------------------------------

@dataclass
class NavHeader:
    version: float
    leap_seconds: int = None
    ion_alpha: tuple = None
    ion_beta: tuple = None


@dataclass
class NavFile:
    header: NavHeader
    records: dict = field(default_factory=dict)     # (prn, toe) -> EphemerisRecord
    errors: list = field(default_factory=list)      # MalformedRecord
    skipped: dict = field(default_factory=dict)     # constellation letter -> count

    def for_prn(self, prn):
        return [r for (p, _), r in self.records.items() if p == prn]


def _nav_header(header):
    version, ftype, system = _version(header, "navigation")
    out = NavHeader(version)
    for num, content in header.get("LEAP SECONDS", []):
        try:
            out.leap_seconds = int(content[:6])
        except ValueError:
            raise MalformedHeader(f"line {num}: unreadable LEAP SECONDS") from None
    try:
        for num, content in header.get("ION ALPHA", []):
            out.ion_alpha = tuple(_float(content[2 + 12 * k:14 + 12 * k]) for k in range(4))
        for num, content in header.get("ION BETA", []):
            out.ion_beta = tuple(_float(content[2 + 12 * k:14 + 12 * k]) for k in range(4))
        for num, content in header.get("IONOSPHERIC CORR", []):
            coeffs = tuple(_float(content[5 + 12 * k:17 + 12 * k]) for k in range(4))
            if content[:4] == "GPSA":
                out.ion_alpha = coeffs
            elif content[:4] == "GPSB":
                out.ion_beta = coeffs
    except ValueError:
        raise MalformedHeader(f"line {num}: unreadable ionosphere coefficients") from None
    if version < 3.0:
        # 2.x splits constellations over file types; only N carries GPS
        system = {"N": "G", "G": "R", "H": "S"}.get(ftype, ftype)
    elif ftype != "N":
        raise MalformedHeader(f"file type {ftype!r} is not navigation data")
    return out, system


def _nav_fields(line, start, count=4):
    return [_float(line[start + 19 * k:start + 19 * (k + 1)]) for k in range(count)]


def _nav_record(version, block):
    """EphemerisRecord from a record's (line number, text) pairs."""
    num, first = block[0]
    try:
        if version >= 3.0:
            prn = int(first[1:3])
            y, mo, d, h, mi = (int(first[4:8]), int(first[9:11]), int(first[12:14]),
                               int(first[15:17]), int(first[18:20]))
            s = float(first[21:23])
            clock = _nav_fields(first, 23, 3)
            start = 4
        else:
            prn = int(first[0:2])
            y, mo, d, h, mi = (int(first[3:5]), int(first[6:8]), int(first[9:11]),
                               int(first[12:14]), int(first[15:17]))
            s = float(first[17:22])
            clock = _nav_fields(first, 22, 3)
            start = 3
    except ValueError as exc:
        raise MalformedRecord(num, f"clock line: {exc}") from None
    orbit = []
    for num, line in block[1:]:
        try:
            orbit.append(_nav_fields(line, start))
        except ValueError as exc:
            raise MalformedRecord(num, f"broadcast orbit: {exc}") from None
    if len(orbit) < 7:
        raise MalformedRecord(block[-1][0], f"truncated record for PRN {prn}: "
                              f"{len(orbit)} of 7 orbit lines")
    (_, crs, dn, m0), (cuc, e, cus, sqrt_a), (toe, cic, om0, cis), \
        (i0, crc, w, om_dot), (idot, _, week, _) = orbit[:5]
    _, toc = gps_time(y, mo, d, h, mi, s)
    try:
        return EphemerisRecord(
            prn=prn, toe=toe, sqrt_a=sqrt_a, e=e, i0=i0, omega0=om0, omega=w, m0=m0,
            delta_n=dn, i_dot=idot, omega_dot=om_dot, cuc=cuc, cus=cus, crc=crc, crs=crs,
            cic=cic, cis=cis, af0=clock[0], af1=clock[1], af2=clock[2], week=int(week), toc=toc)
    except ValueError as exc:
        raise MalformedRecord(num, str(exc)) from None


def _record_start(version, line):
    if version >= 3.0:
        return bool(line[:1].strip())
    return bool(line[:2].strip())


def parse_nav(stream):
    """Parse a GPS navigation file; bad records are listed in ``errors``."""
    lines = _numbered(stream)
    header, body = _split_header(lines, "navigation")
    head, system = _nav_header(header)
    nav = NavFile(head)

    blocks = []
    for num, line in body:
        if not line.strip():
            continue
        if _record_start(head.version, line) or not blocks:
            blocks.append([(num, line)])
        else:
            blocks[-1].append((num, line))

    for block in blocks:
        num, first = block[0]
        letter = first[0].upper() if head.version >= 3.0 else system
        if not _record_start(head.version, first):
            nav.errors.append(MalformedRecord(num, "continuation line without a record"))
            continue
        if letter != "G":
            nav.skipped[letter] = nav.skipped.get(letter, 0) + 1
            continue
        if len(block) > 1 + _NAV_ORBIT_LINES["G"]:
            nav.errors.append(MalformedRecord(block[8][0], "extra lines after a GPS record"))
            continue
        try:
            rec = _nav_record(head.version, block)
        except MalformedRecord as err:
            nav.errors.append(err)
            continue
        nav.records[(rec.prn, rec.toe)] = rec
    for letter, n in nav.skipped.items():
        log.warning("skipped %d non-GPS navigation records (%s)", n, letter)
    return nav


def select_ephemeris(nav, prn, t):
    """Record of ``prn`` with the nearest toe to GPS time-of-week ``t``.

    Ties go to the later record.  Raises NoEphemeris when nothing lies
    within the four-hour validity window.
    """
    best, best_key = None, None
    for rec in nav.for_prn(prn):
        dt = _wrap_week(t - rec.toe)
        key = (abs(dt), dt)   # equal distance: negative dt (later toe) sorts first
        if abs(dt) < EPHEMERIS_VALIDITY and (best_key is None or key < best_key):
            best, best_key = rec, key
    if best is None:
        raise NoEphemeris(prn)
    return best


# -- observations -----------------------------------------------------------

@dataclass(frozen=True)
class ObsRecord:
    prn: int
    pseudorange: float
    cn0: float = None     # None when the file carries no signal strength
    valid: bool = True    # pseudorange inside the plausible GPS interval


@dataclass
class ObsEpoch:
    t: float              # GPS seconds of week
    week: int
    observations: list


@dataclass
class ObsHeader:
    version: float
    approx_position: np.ndarray = None
    obs_types: tuple = ()
    interval: float = None


@dataclass
class ObsFile:
    header: ObsHeader
    epochs: list = field(default_factory=list)
    errors: list = field(default_factory=list)    # MalformedEpoch
    skipped: dict = field(default_factory=dict)   # constellation letter -> rows

    @property
    def interval(self):
        if self.header.interval:
            return self.header.interval
        if len(self.epochs) >= 2:
            return float(np.median(np.diff([e.t for e in self.epochs])))
        return 1.0


def _obs_header(header):
    version, ftype, _ = _version(header, "observation")
    if ftype != "O":
        raise MalformedHeader(f"file type {ftype!r} is not observation data")
    out = ObsHeader(version)
    for num, content in header.get("APPROX POSITION XYZ", []):
        try:
            out.approx_position = np.array([float(content[14 * k:14 * (k + 1)]) for k in range(3)])
        except ValueError:
            raise MalformedHeader(f"line {num}: unreadable APPROX POSITION XYZ") from None
    for num, content in header.get("INTERVAL", []):
        try:
            out.interval = float(content[:10])
        except ValueError:
            raise MalformedHeader(f"line {num}: unreadable INTERVAL") from None
    try:
        if version < 3.0:
            types, n = [], None
            for num, content in header.get("# / TYPES OF OBSERV", []):
                if n is None:
                    n = int(content[:6])
                types += content[6:60].split()
            if n is None or len(types) != n:
                raise MalformedHeader("# / TYPES OF OBSERV count does not match the list")
        else:
            types, n, current = [], None, None
            for num, content in header.get("SYS / # / OBS TYPES", []):
                if content[0] != " ":
                    current = content[0]
                    if current == "G":
                        n = int(content[3:6])
                if current == "G":
                    types += content[7:60].split()
            if n is None or len(types) != n:
                raise MalformedHeader("GPS SYS / # / OBS TYPES missing or miscounted")
    except ValueError:
        raise MalformedHeader(f"line {num}: unreadable observation type count") from None
    out.obs_types = tuple(types)
    return out


def _pick(types, *names):
    for name in names:
        if name in types:
            return types.index(name)
    return None


def _obs_values(text, ntypes):
    """(value or None) for each 16-column observation field."""
    out = []
    for k in range(ntypes):
        f = text[16 * k:16 * k + 14]
        out.append(float(f) if f.strip() else None)
    return out


class _BadLine(ValueError):
    """Field error tied to the physical line that carries it."""

    def __init__(self, line, message):
        super().__init__(message)
        self.line = line


def _sat_values(lines, k, n, ntypes, strip=0):
    """Observation values of one satellite spread over ``n`` lines from ``k``."""
    rows = lines[k:k + n]
    if len(rows) < n:
        raise IndexError("truncated epoch")
    try:
        if n == 1:
            return _obs_values(rows[0][1][strip:], ntypes)
        return _obs_values("".join(r[1][:80].ljust(80) for r in rows), ntypes)
    except ValueError as exc:
        raise _BadLine(rows[0][0], str(exc)) from None


def _make_obs(prn, values, i_code, i_snr):
    p = values[i_code] if i_code is not None else None
    if p is None:
        return None
    cn0 = values[i_snr] if i_snr is not None else None
    if cn0 is None:
        log.info("PRN %02d: no C/N0, RAIM falls back to the default", prn)
    return ObsRecord(prn, p, cn0, PSEUDORANGE_MIN < p < PSEUDORANGE_MAX)


def _epoch_v2(lines, k, i_code, i_snr, ntypes, skipped):
    num, line = lines[k]
    y, mo, d, h, mi = (int(line[1:3]), int(line[4:6]), int(line[7:9]),
                       int(line[10:12]), int(line[13:15]))
    s = float(line[15:26])
    flag = int(line[28:29] or 0)
    nsat = int(line[29:32])
    if flag > 1:
        return None, k + 1 + nsat
    sats = ""
    for j in range((nsat + 11) // 12):
        sats += lines[k + j][1][32:68].ljust(36)
    k += (nsat + 11) // 12
    ids = [sats[3 * j:3 * j + 3] for j in range(nsat)]
    per_sat = (ntypes + 4) // 5
    week, tow = gps_time(y, mo, d, h, mi, s)
    obs = []
    for sid in ids:
        start = k
        k += per_sat
        system = sid[0] if sid[0] != " " else "G"
        if system != "G":
            skipped[system] = skipped.get(system, 0) + 1
            continue
        values = _sat_values(lines, start, per_sat, ntypes)
        rec = _make_obs(int(sid[1:3]), values, i_code, i_snr)
        if rec is not None:
            obs.append(rec)
    return ObsEpoch(tow, week, obs), k


def _epoch_v3(lines, k, i_code, i_snr, ntypes, skipped):
    num, line = lines[k]
    if line[:1] != ">":
        raise ValueError("epoch line must start with '>'")
    y, mo, d, h, mi = (int(line[2:6]), int(line[7:9]), int(line[10:12]),
                       int(line[13:15]), int(line[16:18]))
    s = float(line[18:29])
    flag = int(line[31:32] or 0)
    nsat = int(line[32:35])
    if flag > 1:
        return None, k + 1 + nsat
    week, tow = gps_time(y, mo, d, h, mi, s)
    obs = []
    for j in range(nsat):
        row = lines[k + 1 + j][1]
        if row[:1] == ">":
            raise ValueError(f"epoch announces {nsat} satellites, found {j}")
        if not (row[:1].isalpha() and row[1:3].strip().isdigit()):
            raise _BadLine(lines[k + 1 + j][0], f"bad satellite id {row[:3]!r}")
        if row[0] != "G":
            skipped[row[0]] = skipped.get(row[0], 0) + 1
            continue
        values = _sat_values(lines, k + 1 + j, 1, ntypes, strip=3)
        rec = _make_obs(int(row[1:3]), values, i_code, i_snr)
        if rec is not None:
            obs.append(rec)
    return ObsEpoch(tow, week, obs), k + 1 + nsat


_V2_EPOCH = re.compile(r"^ [ \d]\d [ \d]\d [ \d]\d [ \d]\d [ \d]\d [ \d]\d\.\d{7}  \d[ \d]{2}\d")


def _next_epoch_line(lines, k, version):
    """Index of the next line that looks like an epoch header."""
    for j in range(k, len(lines)):
        line = lines[j][1]
        if (line[:1] == ">") if version >= 3.0 else bool(_V2_EPOCH.match(line)):
            return j
    return len(lines)


def parse_obs(stream):
    """Parse GPS C1/C1C pseudoranges and S1/S1C C/N0 per epoch."""
    lines = _numbered(stream)
    header, body = _split_header(lines, "observation")
    head = _obs_header(header)
    out = ObsFile(head)
    types = head.obs_types
    i_code = _pick(types, "C1C", "C1") if head.version >= 3.0 else _pick(types, "C1", "C1C")
    i_snr = _pick(types, "S1C", "S1") if head.version >= 3.0 else _pick(types, "S1", "S1C")
    if i_code is None:
        raise MalformedHeader("no C1/C1C observable declared")
    reader = _epoch_v3 if head.version >= 3.0 else _epoch_v2
    k = 0
    last_t = None
    while k < len(body):
        num = body[k][0]
        if not body[k][1].strip():
            k += 1
            continue
        try:
            epoch, k = reader(body, k, i_code, i_snr, len(types), out.skipped)
        except (ValueError, IndexError) as exc:
            msg = "truncated epoch" if isinstance(exc, IndexError) else str(exc)
            out.errors.append(MalformedEpoch(getattr(exc, "line", num), msg))
            k = _next_epoch_line(body, k + 1, head.version)
            continue
        if epoch is None:
            continue
        t_abs = epoch.week * GPS_WEEK_SECONDS + epoch.t
        if last_t is not None and t_abs <= last_t:
            out.errors.append(MalformedEpoch(num, "timestamp not after the previous epoch"))
            continue
        last_t = t_abs
        out.epochs.append(epoch)
    for letter, n in out.skipped.items():
        log.warning("skipped %d non-GPS observation rows (%s)", n, letter)
    return out


# -- HAPS sidecar -----------------------------------------------------------

@dataclass(frozen=True)
class SidecarRow:
    t: float
    haps_id: str
    position: tuple
    pseudorange: float
    cn0: float


@dataclass
class HapsSidecar:
    epochs: dict = field(default_factory=dict)   # t -> list of SidecarRow

    @property
    def rows(self):
        return [r for t in sorted(self.epochs) for r in self.epochs[t]]

    def at(self, t, tolerance):
        """Rows of the sidecar epoch nearest to ``t`` within ``tolerance``."""
        if not self.epochs:
            return []
        times = np.fromiter(self.epochs, dtype=float)
        k = int(np.argmin(np.abs(times - t)))
        return self.epochs[times[k]] if abs(times[k] - t) <= tolerance else []

    def sources(self, t, tolerance):
        return [SourceState(r.haps_id, HAPS, np.array(r.position), 0.0) for r in self.at(t, tolerance)]


def load_haps_sidecar(stream, epoch_times=None, interval=None):
    """Read and validate a sidecar CSV.

    When ``epoch_times`` (GPS seconds of week of the observation epochs) is
    given, every row must lie within half an ``interval`` of one of them.
    """
    text = stream.read() if hasattr(stream, "read") else str(stream)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SIDECAR_FIELDS:
        raise SchemaError(1, f"header must be {','.join(SIDECAR_FIELDS)}")
    out = HapsSidecar()
    times = None if epoch_times is None else np.asarray(sorted(epoch_times), dtype=float)
    if times is not None and interval is None:
        interval = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    for row_no, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(SIDECAR_FIELDS):
            raise SchemaError(row_no, f"expected {len(SIDECAR_FIELDS)} columns, got {len(row)}")
        try:
            t, x, y, z, p, cn0 = (float(row[k]) for k in (0, 2, 3, 4, 5, 6))
        except ValueError as exc:
            raise SchemaError(row_no, str(exc)) from None
        if not all(math.isfinite(v) for v in (t, x, y, z, p, cn0)):
            raise SchemaError(row_no, "non-finite value")
        if p <= 0.0:
            raise SchemaError(row_no, f"pseudorange must be positive, got {p}")
        if not row[1].strip():
            raise SchemaError(row_no, "empty haps_id")
        if times is not None:
            nearest = times[np.argmin(np.abs(times - t))]
            if abs(nearest - t) > 0.5 * interval:
                raise TimestampMisaligned(f"row {row_no}: t = {t} has no observation epoch "
                                          f"within {0.5 * interval} s")
            t = float(nearest)
        out.epochs.setdefault(t, []).append(SidecarRow(t, row[1].strip(), (x, y, z), p, cn0))
    return out


def dump_haps_sidecar(sidecar):
    """CSV text of a sidecar; values keep full double precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIDECAR_FIELDS)
    for r in sidecar.rows:
        w.writerow([repr(float(r.t)), r.haps_id, *(repr(float(v)) for v in r.position),
                    repr(float(r.pseudorange)), repr(float(r.cn0))])
    return buf.getvalue()


@dataclass
class TruthTrajectory:
    t: np.ndarray           # GPS seconds of week
    position: np.ndarray    # (N, 3) ECEF [m]
    clock: np.ndarray       # receiver clock offset [s]

    def at(self, t):
        pos = np.array([np.interp(t, self.t, self.position[:, k]) for k in range(3)])
        return pos, float(np.interp(t, self.t, self.clock))


def load_truth_trajectory(stream):
    """CSV with columns ``t_gps_s,x_m,y_m,z_m`` and an optional ``clock_s``."""
    text = stream.read() if hasattr(stream, "read") else str(stream)
    reader = csv.DictReader(io.StringIO(text))
    need = {"t_gps_s", "x_m", "y_m", "z_m"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise SchemaError(1, "truth trajectory needs t_gps_s,x_m,y_m,z_m")
    t, pos, clk = [], [], []
    for row_no, row in enumerate(reader, start=2):
        try:
            t.append(float(row["t_gps_s"]))
            pos.append([float(row[k]) for k in ("x_m", "y_m", "z_m")])
            clk.append(float(row.get("clock_s") or 0.0))
        except (TypeError, ValueError) as exc:
            raise SchemaError(row_no, str(exc)) from None
    if not t:
        raise SchemaError(2, "empty truth trajectory")
    if np.any(np.diff(t) <= 0):
        raise SchemaError(2, "timestamps must increase")
    return TruthTrajectory(np.array(t), np.array(pos), np.array(clk))


def synthesize_sidecar(truth, platforms, times, sigma, rng, cn0=45.0):
    """Sidecar for ``platforms`` seen from a truth trajectory.

    Pseudorange = geometric range + c * receiver clock + N(0, sigma^2); the
    platform position recorded is the one at signal emission.
    """
    from .orbits import haps_position
    from .scenario import sagnac_ranges

    out = HapsSidecar()
    for t in times:
        receiver, clock = truth.at(t)
        rows = []
        for h in platforms:
            tau = np.linalg.norm(haps_position(h, t).position - receiver) / C
            state = haps_position(h, t - tau)
            rho, _ = sagnac_ranges(receiver, state.position[None, :])
            p = float(rho[0]) + C * (clock - state.clock_offset) + sigma * rng.standard_normal()
            rows.append(SidecarRow(float(t), h.id, tuple(map(float, state.position)), p, cn0))
        out.epochs[float(t)] = rows
    return out
