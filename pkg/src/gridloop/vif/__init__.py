"""Packet bridge between real applications and the simulated network.

``vif`` runs beside an application, ``vif-sim`` is its kernel-side peer.
Both are separate executables; import the submodules directly.
"""
