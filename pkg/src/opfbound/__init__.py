"""Certified lower bounds for AC optimal power flow via chordal SDP relaxations."""

__version__ = "0.1.0"
