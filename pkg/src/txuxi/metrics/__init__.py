"""Distribution comparison metrics for saliency maps."""

from .distributions import GroundDistance, downsample, min_similarity, normalize
from .transport import FlowPlan, emd, solve_transport, transport_plan

__all__ = ["FlowPlan", "GroundDistance", "downsample", "emd", "min_similarity", "normalize", "solve_transport",
           "transport_plan"]
