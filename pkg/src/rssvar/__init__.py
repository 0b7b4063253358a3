"""RSS variance vs. person position: ETAP surfaces, Ricean statistics, and Monte Carlo checks."""

__version__ = "0.1.0"
