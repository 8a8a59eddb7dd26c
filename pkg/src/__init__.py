"""Property inference against federated learning with secure aggregation."""
