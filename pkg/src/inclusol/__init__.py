"""Galerkin-like solvers and a-priori bounds for integro-differential inclusions and sweeping processes."""
