"""Boundary-mean-zero torsion energy: closed forms, P1 finite elements and shape calculus."""

__version__ = "0.1.0"
