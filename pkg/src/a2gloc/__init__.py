"""Air-to-ground RSS simulation and UAV-based radio source localization."""

__version__ = "0.1.0"
