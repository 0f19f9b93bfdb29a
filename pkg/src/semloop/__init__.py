"""Semantic graph loop closure for labelled LiDAR scans.

Scans become fixed-size semantic graphs, a graph-attention encoder and a
pairwise comparator score place matches, accepted matches are registered
with semantic point-to-line/plane least squares, and a pose graph folds the
resulting constraints into the trajectory.
"""

from .geometry import PoseSE3
from .graph import SemanticGraph, build_graph
from .ingest import LabeledPointCloud, ScanPair

__version__ = "0.1.0"

__all__ = ["PoseSE3", "SemanticGraph", "build_graph", "LabeledPointCloud", "ScanPair", "__version__"]
