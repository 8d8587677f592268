"""Cooling-load forecasting, optimal chiller loading and chiller + thermal
storage design costing for a district cooling plant."""

__version__ = "0.1.0"
