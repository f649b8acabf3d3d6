"""chasecam: target-chasing drone motion planner.

Pipeline: predict the target's trajectory through an obstacle map, preplan
an occlusion-aware corridor by layered-graph search, then generate a smooth
chasing trajectory by quadratic programming, all inside a receding-horizon
loop.
"""

from .world import VoxelGrid, EsdfGrid, compute_esdf, load_map, format_map

__all__ = ["VoxelGrid", "EsdfGrid", "compute_esdf", "load_map", "format_map"]
__version__ = "0.1.0"
