"""Daily POI visit forecasting by translating observation prompts into prediction sentences."""

__version__ = "0.1.0"
