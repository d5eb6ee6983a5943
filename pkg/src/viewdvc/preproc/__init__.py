from .markers import SegmentationError, load_markers, segment_by_markers
from .masks import (
    load_mask_file,
    refine_frame,
    refine_masks,
    rle_decode,
    rle_encode,
    save_mask_file,
)
from .tracking import (
    Detection,
    SortParams,
    Track,
    load_detections,
    save_detections,
    track_sort,
    tracks_to_json,
)
from .views import crop_from_boxes, face_presence, hand_crop_boxes, label_views

__all__ = [
    "Detection",
    "SegmentationError",
    "SortParams",
    "Track",
    "crop_from_boxes",
    "face_presence",
    "hand_crop_boxes",
    "label_views",
    "load_detections",
    "load_markers",
    "load_mask_file",
    "refine_frame",
    "refine_masks",
    "rle_decode",
    "rle_encode",
    "save_detections",
    "save_mask_file",
    "segment_by_markers",
    "track_sort",
    "tracks_to_json",
]
