"""Discrete biharmonic maps from flat tori into space forms: operators, flows,
regularity inequalities, Moser iteration probes and bubbling measures."""

from __future__ import annotations

__version__ = "0.1.0"

from .calculus import MapField, Section, bitension, tension
from .mesh import DomainMesh, build_mesh
from .space_forms import SpaceForm, euclidean, hyperbolic, sphere
from .variational import FlowConfig, bienergy, energy, run_flow

__all__ = [
    "DomainMesh",
    "FlowConfig",
    "MapField",
    "Section",
    "SpaceForm",
    "bienergy",
    "bitension",
    "build_mesh",
    "energy",
    "euclidean",
    "hyperbolic",
    "run_flow",
    "sphere",
    "tension",
]
