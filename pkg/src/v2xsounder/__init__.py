"""28 GHz sliding-correlator channel-sounding analysis toolkit and V2X
antenna-tracking simulator."""

__version__ = "0.1.0"
