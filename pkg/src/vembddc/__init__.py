"""Divergence-free VEM discretization of Stokes flow with BDDC-preconditioned interface solves."""

__version__ = "0.1.0"
