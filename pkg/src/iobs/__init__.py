"""Interval observer synthesis toolkit for bounded-Jacobian nonlinear systems.

Builds correct-by-construction interval framers for discrete- and
continuous-time systems with bounded uncertainty, certifies input-to-state
stability through a positive linear comparison system, and synthesizes
L1-optimal (mixed-integer LP) or H-infinity-optimal (mixed-integer SDP)
observer gains.
"""

__version__ = "0.1.0"
