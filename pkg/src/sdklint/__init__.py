"""Static detection of SDK-version inconsistencies in Android APKs."""

__version__ = "0.1.0"
