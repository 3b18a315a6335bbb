"""Evaluation harness: answer metrics, statistics and the stress experiments."""
