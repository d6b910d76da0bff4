"""Deterministic, steerable crowd-evacuation simulation engine.

Thousands of persona-bearing agents deliberate through a pluggable decision
provider, move under a deterministic grid-based spatial model, and suffer
empirically-anchored hazards. Operators steer the running simulation through
interventions, fork alternative timelines, and collaborate over a synchronized
session protocol backed by an embedded store.
"""

__version__ = "0.1.0"
