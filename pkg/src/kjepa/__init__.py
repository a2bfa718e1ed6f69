"""Koopman-invariant regime discovery with joint-embedding predictive models."""
