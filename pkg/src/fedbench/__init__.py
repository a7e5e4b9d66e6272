"""Transfer benchmarking harness for HTTP data federations."""

__version__ = "0.1.0"
