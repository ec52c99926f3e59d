"""Dynamic-phasor testbed for cyberattacks on an inverter-based microgrid in the
IEEE 39-bus system."""

__version__ = "0.1.0"
