"""Benchmark problem definitions: cylinder scattering, horn and noise barrier."""
