"""Energy-data extension for Module Type Package manifests.

Injects the EnRGView data object and the energy-management structure into
AutomationML/CAEX manifests, validates the result, simulates a process
equipment assembly serving the measurements, and aggregates the monitored
values into energy reports on the orchestration side.
"""

__version__ = "0.1.0"
