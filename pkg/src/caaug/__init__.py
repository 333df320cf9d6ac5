"""Context-aware ground-truth augmentation for lidar point clouds.

Objects from a ground-truth database keep their range and are rotated about
the sensor's z-axis into azimuth columns where the scene leaves them
visible, then merged with the frame under a range-view occlusion strategy.
"""
from .database import (GtDatabase, GtObject, build_database, compute_rangebin, load_database,
                       sample_objects, save_database)
from .errors import *  # noqa: F401,F403
from .geometry import (GROUND, OBSTACLE, Box3D, LidarSpec, Pixel, PointCloud, bev_corners, point_in_bev_box,
                       points_in_box_3d, project_points, rotate_z, spherical_project)
from .kitti import (Calib, FrameBundle, KittiLabel, label_to_lidar_box, lidar_box_to_label, read_frame,
                    read_velodyne, write_frame, write_velodyne)
from .occlusion import (OcclusionReport, RangeImage, Strategy, apply_culling, apply_drilling, apply_naive,
                        render_range_image, resolve)
from .partition import Partition, PillarGrid, compute_validspace, partition_scene
from .pipeline import AugConfig, FrameStats, augment_dataset, augment_frame, derive_frame_seed, run_frame
from .placement import (CollisionMode, PlacementConfig, PlacementResult, Rejection, collision_check,
                        feasibility_vector, location_check, rotate_to_column, update_validspace)
from .synthetic import RangeWall, Rod, SceneDescriptor, generate_synthetic_scene

__version__ = "0.1.0"
