"""Federated training of grid-to-grid routability estimators."""

__version__ = "0.1.0"
