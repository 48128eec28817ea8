"""Intervention-based imitation learning: gated value targets, a weighted
BC + RL objective, a SNAIL-style sequence policy, scripted-supervisor
simulators, and a live human-supervision bridge."""

__version__ = "0.1.0"
