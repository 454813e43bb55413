"""Robot-centric lidar voxel mapping with terrain layer extraction."""

from .fusion import MapBuffer, combine, combine_maps, push_map
from .grid import (
    Empty,
    GridSpec,
    MapOrigin,
    Occupied,
    VoxelMap,
    VoxelStats,
    query,
    snap_origin,
    voxel_density,
    world_to_index,
)
from .integrate import Pose, Ray, ScanFrame, count_pass, integrate_scan, metrics_pass, transform_cloud, traverse_ray
from .layers import (
    LayerGrid,
    LayerParams,
    LayerStack,
    build_layers,
    extract_height_map,
    negative_obstacles,
    positive_obstacles,
    slope_roughness,
)

__version__ = "0.1.0"

__all__ = [
    "Empty",
    "GridSpec",
    "LayerGrid",
    "LayerParams",
    "LayerStack",
    "MapBuffer",
    "MapOrigin",
    "Occupied",
    "Pose",
    "Ray",
    "ScanFrame",
    "VoxelMap",
    "VoxelStats",
    "build_layers",
    "combine",
    "combine_maps",
    "count_pass",
    "extract_height_map",
    "integrate_scan",
    "metrics_pass",
    "negative_obstacles",
    "positive_obstacles",
    "push_map",
    "query",
    "slope_roughness",
    "snap_origin",
    "transform_cloud",
    "traverse_ray",
    "voxel_density",
    "world_to_index",
]
