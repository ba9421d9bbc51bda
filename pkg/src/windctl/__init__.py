"""Desk-scale SDN/NFV control-plane testbench for industrial networks."""

__version__ = "0.1.0"
