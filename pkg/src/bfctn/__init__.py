"""Bayesian fully-connected tensor network fusion of LR-HSI and HR-MSI."""
