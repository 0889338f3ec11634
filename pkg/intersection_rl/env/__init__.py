"""Driving environment: ego/participant dynamics, signals, traffic, perception."""
