"""Shared physical constants (single source of truth for every module)."""

SPEED_OF_LIGHT = 299792458.0  # m/s

# WGS-84 ellipsoid
WGS84_A = 6378137.0  # semi-major axis, m
WGS84_F = 1.0 / 298.257223563  # flattening
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)  # first eccentricity squared

KNOT_MPS = 0.514444  # m/s per knot (NMEA speed-over-ground unit)
