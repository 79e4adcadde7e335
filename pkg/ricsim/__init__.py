# ricsim: deterministic Near-RT RIC and xApp simulator
__version__ = "0.1.0"
