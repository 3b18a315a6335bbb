"""Tests for the LightMem memory engine and its benchmarks."""
