from .decode import (
    decode_events,
    denormalize,
    generate_with_gt_proposals,
    greedy_captions,
    gt_proposal_queries,
)
from .loss import LossWeights, caption_io, cl_to_se, giou_1d, gt_targets, hungarian_match, task_loss
from .model import CaptionDecoder, CaptionerNet, Converter, QueryOutputs, convert, forward_captioner

__all__ = [
    "CaptionDecoder",
    "CaptionerNet",
    "Converter",
    "LossWeights",
    "QueryOutputs",
    "caption_io",
    "cl_to_se",
    "convert",
    "decode_events",
    "denormalize",
    "forward_captioner",
    "generate_with_gt_proposals",
    "giou_1d",
    "greedy_captions",
    "gt_proposal_queries",
    "gt_targets",
    "hungarian_match",
    "task_loss",
]
