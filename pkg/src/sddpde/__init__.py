"""Spectral Galerkin simulation of non-local PDEs with a state-dependent delay."""
