"""Urban tactical wargame with a predictive command advisor."""

__version__ = "0.1.0"
