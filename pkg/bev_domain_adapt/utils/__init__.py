from bev_domain_adapt.utils.geometry import bev_intersection_area, iou_3d, bev_corners, points_in_box
from bev_domain_adapt.utils.seeding import derive_seed, make_rng
