"""Geodetic data model and local-frame geometry for the tracking platform.

Covers NMEA-0183 ingestion (GGA/RMC), WGS-84 geodetic <-> ECEF transforms,
local east-north-up frames, Tx-Rx separations, pointing-angle solutions
between two geo-located nodes, and an RTK-grade Gaussian position noise
model. Everything here is pure; the only randomness is a caller-supplied
numpy Generator (or seed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .constants import KNOT_MPS, WGS84_A, WGS84_E2, WGS84_F


class ChecksumMismatch(ValueError):
    """NMEA sentence failed XOR checksum verification."""


class UnsupportedSentenceType(ValueError):
    """Well-formed NMEA sentence of a type outside the supported set."""


class MalformedField(ValueError):
    """NMEA field content could not be interpreted."""


class DegenerateGeometry(ValueError):
    """Pointing solution requested between coincident points."""


def wrap_deg_360(angle: float) -> float:
    """Wrap an angle in degrees into [0, 360)."""
    a = math.fmod(angle, 360.0)
    if a < 0.0:
        a += 360.0
    return 0.0 if a == 360.0 else a


def wrap_deg_180(angle: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    a = math.fmod(angle + 180.0, 360.0)
    if a < 0.0:
        a += 360.0
    a -= 180.0
    return 180.0 if a == -180.0 else a


@dataclass(frozen=True)
class GeoFix:
    """One geo-positioning sample (position, kinematics, quality, time)."""

    latitude: float  # deg, [-90, 90]
    longitude: float  # deg, [-180, 180)
    altitude_ellipsoidal: float = 0.0  # m above WGS-84 ellipsoid
    speed_horizontal: float = 0.0  # m/s, >= 0
    acceleration_horizontal: float = 0.0  # m/s^2
    heading: float = 0.0  # deg clockwise from true north, [0, 360)
    fix_time: int = 0  # ns since epoch
    accuracy_3d: float = 0.0  # m, >= 0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude < 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180)")
        if not 0.0 <= self.heading < 360.0:
            raise ValueError(f"heading {self.heading} outside [0, 360)")
        if self.speed_horizontal < 0.0:
            raise ValueError("speed_horizontal must be >= 0")
        if self.accuracy_3d < 0.0:
            raise ValueError("accuracy_3d must be >= 0")


@dataclass(frozen=True)
class EcefPoint:
    """Earth-centered Earth-fixed coordinates, meters."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class EnuVector:
    """East-north-up offset relative to a reference GeoFix, meters."""

    east: float
    north: float
    up: float


@dataclass(frozen=True)
class PointingAngles:
    """Absolute and heading-relative angles from one node toward a peer."""

    azimuth: float  # deg clockwise from true north, [0, 360)
    elevation: float  # deg above horizontal, [-90, 90]
    yaw_relative: float  # deg relative to own heading, (-180, 180]
    pitch_relative: float  # deg, [-90, 90]


# ---------------------------------------------------------------------------
# NMEA-0183
# ---------------------------------------------------------------------------

SUPPORTED_SENTENCES = ("GGA", "RMC")


@dataclass(frozen=True)
class NmeaFragment:
    """Fields recovered from a single NMEA sentence; absent fields are None.

    GGA supplies position and ellipsoidal altitude; RMC supplies speed,
    heading, and an absolute fix time (it is the only supported sentence
    carrying a date).
    """

    sentence_type: str
    talker: str
    latitude: float | None = None
    longitude: float | None = None
    altitude_ellipsoidal: float | None = None
    speed_horizontal: float | None = None
    heading: float | None = None
    utc_time_s: float | None = None  # seconds since UTC midnight
    fix_time: int | None = None  # ns since epoch (RMC only)


def nmea_checksum(body: str) -> int:
    """XOR of all characters between '$' and '*' (exclusive)."""
    digest = 0
    for ch in body:
        digest ^= ord(ch)
    return digest


def _nmea_float(raw: str, what: str) -> float | None:
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError as exc:
        raise MalformedField(f"bad {what} field: {raw!r}") from exc


def _nmea_latlon(value: str, hemi: str, what: str) -> float | None:
    # ddmm.mmmm (lat) / dddmm.mmmm (lon), hemisphere letter flips sign
    if value == "" or hemi == "":
        return None
    dot = value.find(".")
    head = value[:dot] if dot >= 0 else value
    if len(head) < 3 or not head.isdigit():
        raise MalformedField(f"bad {what} field: {value!r}")
    try:
        degrees = float(head[:-2])
        minutes = float(head[-2:] + (value[dot:] if dot >= 0 else ""))
    except ValueError as exc:
        raise MalformedField(f"bad {what} field: {value!r}") from exc
    magnitude = degrees + minutes / 60.0
    if hemi in ("S", "W"):
        magnitude = -magnitude
    elif hemi not in ("N", "E"):
        raise MalformedField(f"bad {what} hemisphere: {hemi!r}")
    if what == "longitude" and magnitude == 180.0:
        magnitude = -180.0
    return magnitude


def _nmea_utc_time(raw: str) -> float | None:
    if raw == "":
        return None
    if len(raw) < 6:
        raise MalformedField(f"bad UTC time field: {raw!r}")
    try:
        hh, mm = int(raw[0:2]), int(raw[2:4])
        ss = float(raw[4:])
    except ValueError as exc:
        raise MalformedField(f"bad UTC time field: {raw!r}") from exc
    return hh * 3600.0 + mm * 60.0 + ss


def parse_nmea(sentence: str) -> NmeaFragment:
    """Parse one NMEA-0183 line (GGA or RMC) after verifying its checksum.

    The line must start with '$' and end with a '*HH' checksum field;
    trailing CR/LF is tolerated.
    """
    line = sentence.strip()
    if not line.startswith("$"):
        raise MalformedField("sentence does not start with '$'")
    star = line.rfind("*")
    if star < 0 or len(line) - star - 1 != 2:
        raise MalformedField("sentence does not end with '*HH' checksum")
    body, claimed = line[1:star], line[star + 1 :]
    try:
        claimed_digest = int(claimed, 16)
    except ValueError as exc:
        raise MalformedField(f"non-hex checksum field {claimed!r}") from exc
    if nmea_checksum(body) != claimed_digest:
        raise ChecksumMismatch(
            f"checksum {claimed} does not match XOR digest {nmea_checksum(body):02X}"
        )

    fields = body.split(",")
    address = fields[0]
    if len(address) < 5:
        raise MalformedField(f"bad address field {address!r}")
    talker, stype = address[:-3], address[-3:]
    if stype not in SUPPORTED_SENTENCES:
        raise UnsupportedSentenceType(f"sentence type {stype!r} not in {SUPPORTED_SENTENCES}")

    def field(i: int) -> str:
        return fields[i] if i < len(fields) else ""

    if stype == "GGA":
        alt_msl = _nmea_float(field(9), "altitude")
        geoid_sep = _nmea_float(field(11), "geoid separation")
        alt_ell = None
        if alt_msl is not None:
            alt_ell = alt_msl + (geoid_sep if geoid_sep is not None else 0.0)
        return NmeaFragment(
            sentence_type="GGA",
            talker=talker,
            latitude=_nmea_latlon(field(2), field(3), "latitude"),
            longitude=_nmea_latlon(field(4), field(5), "longitude"),
            altitude_ellipsoidal=alt_ell,
            utc_time_s=_nmea_utc_time(field(1)),
        )

    # RMC
    utc = _nmea_utc_time(field(1))
    speed_knots = _nmea_float(field(7), "speed")
    course = _nmea_float(field(8), "course")
    date_raw = field(9)
    fix_time = None
    if date_raw != "" and utc is not None:
        if len(date_raw) != 6 or not date_raw.isdigit():
            raise MalformedField(f"bad date field: {date_raw!r}")
        day, month, yy = int(date_raw[0:2]), int(date_raw[2:4]), int(date_raw[4:6])
        year = 1900 + yy if yy >= 80 else 2000 + yy  # GPS-era two-digit pivot
        try:
            midnight = datetime(year, month, day, tzinfo=timezone.utc)
        except ValueError as exc:
            raise MalformedField(f"bad date field: {date_raw!r}") from exc
        fix_time = int(midnight.timestamp()) * 1_000_000_000 + int(round(utc * 1e9))
    return NmeaFragment(
        sentence_type="RMC",
        talker=talker,
        latitude=_nmea_latlon(field(3), field(4), "latitude"),
        longitude=_nmea_latlon(field(5), field(6), "longitude"),
        speed_horizontal=None if speed_knots is None else speed_knots * KNOT_MPS,
        heading=None if course is None else wrap_deg_360(course),
        utc_time_s=utc,
        fix_time=fix_time,
    )


# ---------------------------------------------------------------------------
# WGS-84 transforms
# ---------------------------------------------------------------------------


def geodetic_to_ecef(fix: GeoFix) -> EcefPoint:
    """WGS-84 geodetic coordinates to Earth-centered Earth-fixed meters."""
    lat = math.radians(fix.latitude)
    lon = math.radians(fix.longitude)
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    h = fix.altitude_ellipsoidal
    return EcefPoint(
        x=(n + h) * cos_lat * math.cos(lon),
        y=(n + h) * cos_lat * math.sin(lon),
        z=(n * (1.0 - WGS84_E2) + h) * sin_lat,
    )


def ecef_to_geodetic(point: EcefPoint) -> tuple[float, float, float]:
    """Inverse of geodetic_to_ecef; returns (lat deg, lon deg, alt m).

    Fixed-point iteration on the geodetic latitude; converges well below
    1e-9 deg / 1e-6 m everywhere off the poles.
    """
    x, y, z = point.x, point.y, point.z
    lon = math.atan2(y, x)
    p = math.hypot(x, y)
    b = WGS84_A * (1.0 - WGS84_F)
    if p < 1e-9:  # polar axis
        lat = math.copysign(math.pi / 2.0, z)
        return math.degrees(lat), math.degrees(lon), abs(z) - b
    lat = math.atan2(z, p * (1.0 - WGS84_E2))
    h = 0.0
    for _ in range(15):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        h = p / math.cos(lat) - n
        new_lat = math.atan2(z, p * (1.0 - WGS84_E2 * n / (n + h)))
        if abs(new_lat - lat) < 1e-15:
            lat = new_lat
            break
        lat = new_lat
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    h = p / math.cos(lat) - n
    return math.degrees(lat), math.degrees(lon), h


def _enu_axes(fix: GeoFix):
    lat = math.radians(fix.latitude)
    lon = math.radians(fix.longitude)
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    sin_lon, cos_lon = math.sin(lon), math.cos(lon)
    east = (-sin_lon, cos_lon, 0.0)
    north = (-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat)
    up = (cos_lat * cos_lon, cos_lat * sin_lon, sin_lat)
    return east, north, up


def ecef_to_enu(reference: GeoFix, target: EcefPoint) -> EnuVector:
    """Rotate (target - reference) into the local tangent frame at reference."""
    origin = geodetic_to_ecef(reference)
    d = (target.x - origin.x, target.y - origin.y, target.z - origin.z)
    east, north, up = _enu_axes(reference)
    dot = lambda u, v: u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
    return EnuVector(east=dot(east, d), north=dot(north, d), up=dot(up, d))


def enu_to_ecef(reference: GeoFix, offset: EnuVector) -> EcefPoint:
    """Apply a local east-north-up offset at reference, returning ECEF."""
    origin = geodetic_to_ecef(reference)
    east, north, up = _enu_axes(reference)
    return EcefPoint(
        x=origin.x + offset.east * east[0] + offset.north * north[0] + offset.up * up[0],
        y=origin.y + offset.east * east[1] + offset.north * north[1] + offset.up * up[1],
        z=origin.z + offset.east * east[2] + offset.north * north[2] + offset.up * up[2],
    )


def distance(fix_a: GeoFix, fix_b: GeoFix) -> tuple[float, float]:
    """(d2d, d3d) separation in meters between two fixes.

    d3d is the ECEF chord length (exactly symmetric in its arguments);
    d2d averages the horizontal tangent-frame norms at both endpoints,
    which keeps it symmetric too. Flat-frame distances are accurate to
    better than 1e-5 relative at the few-km scales targeted here.
    """
    pa = geodetic_to_ecef(fix_a)
    pb = geodetic_to_ecef(fix_b)
    d3d = math.sqrt((pa.x - pb.x) ** 2 + (pa.y - pb.y) ** 2 + (pa.z - pb.z) ** 2)
    enu_ab = ecef_to_enu(fix_a, pb)
    enu_ba = ecef_to_enu(fix_b, pa)
    d2d = 0.5 * (math.hypot(enu_ab.east, enu_ab.north) + math.hypot(enu_ba.east, enu_ba.north))
    return min(d2d, d3d), d3d


def pointing_to(self_fix: GeoFix, peer: GeoFix) -> PointingAngles:
    """Angles from self_fix toward peer (absolute and heading-relative).

    yaw_relative is referenced to the GPS heading of self_fix.
    """
    enu = ecef_to_enu(self_fix, geodetic_to_ecef(peer))
    horizontal = math.hypot(enu.east, enu.north)
    if math.sqrt(horizontal * horizontal + enu.up * enu.up) == 0.0:
        raise DegenerateGeometry("pointing undefined for coincident fixes")
    azimuth = wrap_deg_360(math.degrees(math.atan2(enu.east, enu.north)))
    elevation = math.degrees(math.atan2(enu.up, horizontal))
    return PointingAngles(
        azimuth=azimuth,
        elevation=elevation,
        yaw_relative=wrap_deg_180(azimuth - self_fix.heading),
        pitch_relative=elevation,
    )


def angular_separation(az_a: float, el_a: float, az_b: float, el_b: float) -> float:
    """Great-circle angle in degrees between two (azimuth, elevation) directions."""
    ara, era = math.radians(az_a), math.radians(el_a)
    arb, erb = math.radians(az_b), math.radians(el_b)
    va = (math.sin(ara) * math.cos(era), math.cos(ara) * math.cos(era), math.sin(era))
    vb = (math.sin(arb) * math.cos(erb), math.cos(arb) * math.cos(erb), math.sin(erb))
    dot = va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))


# ---------------------------------------------------------------------------
# RTK noise model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RtkNoiseConfig:
    """Zero-mean Gaussian position noise, one sigma per ENU axis (meters)."""

    sigma_per_axis: float

    def __post_init__(self):
        if self.sigma_per_axis < 0.0:
            raise ValueError("sigma_per_axis must be >= 0")


def apply_rtk_noise(fix: GeoFix, config: RtkNoiseConfig, rng) -> GeoFix:
    """Perturb a fix with independent Gaussian noise on each ENU axis.

    `rng` is a numpy Generator or a seed for one; results are
    deterministic for a given seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    de, dn, du = (float(v) for v in rng.normal(0.0, config.sigma_per_axis, size=3))
    if de == 0.0 and dn == 0.0 and du == 0.0:
        return fix
    perturbed = enu_to_ecef(fix, EnuVector(east=de, north=dn, up=du))
    lat, lon, alt = ecef_to_geodetic(perturbed)
    return replace(fix, latitude=lat, longitude=lon, altitude_ellipsoidal=alt)


# ---------------------------------------------------------------------------
# Track logs
# ---------------------------------------------------------------------------

TRACK_FIELDS = (
    "time_ns",
    "lat_deg",
    "lon_deg",
    "alt_m",
    "speed_mps",
    "accel_mps2",
    "heading_deg",
    "acc3d_m",
)


def read_track(path) -> list[GeoFix]:
    """Load a track CSV; fix times must be strictly increasing."""
    fixes: list[GeoFix] = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(TRACK_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"track CSV missing columns: {sorted(missing)}")
        for row in reader:
            fixes.append(
                GeoFix(
                    latitude=float(row["lat_deg"]),
                    longitude=float(row["lon_deg"]),
                    altitude_ellipsoidal=float(row["alt_m"]),
                    speed_horizontal=float(row["speed_mps"]),
                    acceleration_horizontal=float(row["accel_mps2"]),
                    heading=float(row["heading_deg"]),
                    fix_time=int(row["time_ns"]),
                    accuracy_3d=float(row["acc3d_m"]),
                )
            )
    for earlier, later in zip(fixes, fixes[1:]):
        if later.fix_time <= earlier.fix_time:
            raise ValueError("track fix times must be strictly increasing")
    return fixes


def write_track(path, fixes) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACK_FIELDS)
        for fix in fixes:
            writer.writerow(
                [
                    fix.fix_time,
                    repr(fix.latitude),
                    repr(fix.longitude),
                    repr(fix.altitude_ellipsoidal),
                    repr(fix.speed_horizontal),
                    repr(fix.acceleration_horizontal),
                    repr(fix.heading),
                    repr(fix.accuracy_3d),
                ]
            )
