"""Numerical laboratory for non-reversible Finsler metrics on surfaces."""
from __future__ import annotations

from .decompose import OneFormField, TheoremReport, VerifyConfig, verify_theorem
from .metrics import Atlas, Chart, ChartPoint, ConvexDomain, Kind, MetricSpec, Region, SPHERE
from .norms import AsymNorm, SupportBody

__all__ = [
    "AsymNorm",
    "Atlas",
    "Chart",
    "ChartPoint",
    "ConvexDomain",
    "Kind",
    "MetricSpec",
    "OneFormField",
    "Region",
    "SPHERE",
    "SupportBody",
    "TheoremReport",
    "VerifyConfig",
    "verify_theorem",
]
__version__ = "0.1.0"
