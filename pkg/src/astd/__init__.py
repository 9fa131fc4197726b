"""Active sonar target detection toolkit.

Simulates active sonar returns on a circular hydrophone array and detects
targets by decomposing detection into bearing estimation (a phase-feature
DNN) and distance estimation (a patch transformer over time segments),
with classical DOA/ranging baselines and a metric/experiment harness.
"""

__version__ = "0.1.0"
