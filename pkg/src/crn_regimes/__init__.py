"""crn-regimes - Simulate a regulated reaction network and check its scaling limits."""

__version__ = "0.3.0"
