"""Discrete-event model of coordinated OFDMA across fiber-linked Wi-Fi access points."""

__version__ = "0.1.0"
