"""Rough stochastic control with affine rough drivers."""
