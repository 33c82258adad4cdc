"""Verification of causal abstractions between finite discrete causal models."""
