"""Configuration and data generation helpers."""
