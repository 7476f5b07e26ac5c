"""Post-hoc attribution methods producing input-resolution saliency maps."""

from .base import (SIGNED, MethodConfig, MethodId, RawSaliency, SegmentGrid, normalize_attribution,
                   segment_grid, upsample)
from .cam import explain_gradcam, explain_gradcampp, explain_scorecam, explain_sidu
from .gradients import (explain_deeplift_map, explain_gbp, explain_gradient, explain_integrated_gradients,
                        explain_lrp_map, explain_smoothgrad)
from .perturbation import explain_kernel_shap, explain_lime, explain_rise

EXPLAINERS = {
    MethodId.GRADIENT: explain_gradient,
    MethodId.GBP: explain_gbp,
    MethodId.SMOOTHGRAD: explain_smoothgrad,
    MethodId.INTEGRATED_GRADIENTS: explain_integrated_gradients,
    MethodId.DEEPLIFT: explain_deeplift_map,
    MethodId.LRP: explain_lrp_map,
    MethodId.LIME: explain_lime,
    MethodId.KERNEL_SHAP: explain_kernel_shap,
    MethodId.RISE: explain_rise,
    MethodId.GRADCAM: explain_gradcam,
    MethodId.GRADCAMPP: explain_gradcampp,
    MethodId.SCORECAM: explain_scorecam,
    MethodId.SIDU: explain_sidu,
}

# family membership used for the ordering check; SmoothGrad (noise makes its
# inputs out of distribution) and ScoreCAM (half CAM, half occlusion) are
# reported per method but left out of the family means
FAMILIES = {
    "backprop": (MethodId.GRADIENT, MethodId.GBP, MethodId.LRP, MethodId.DEEPLIFT,
                 MethodId.INTEGRATED_GRADIENTS),
    "cam": (MethodId.GRADCAM, MethodId.GRADCAMPP),
    "sensitivity": (MethodId.LIME, MethodId.KERNEL_SHAP, MethodId.RISE, MethodId.SIDU),
}


def explain(method, net, x, target=None, cfg: MethodConfig | None = None) -> RawSaliency:
    """Run one attribution method by id (or name) on a single image."""
    mid = method if isinstance(method, MethodId) else MethodId.parse(method)
    return EXPLAINERS[mid](net, x, target, cfg or MethodConfig())


__all__ = [
    "EXPLAINERS", "FAMILIES", "SIGNED", "MethodConfig", "MethodId", "RawSaliency", "SegmentGrid", "explain",
    "explain_deeplift_map", "explain_gbp", "explain_gradcam", "explain_gradcampp", "explain_gradient",
    "explain_integrated_gradients", "explain_kernel_shap", "explain_lime", "explain_lrp_map", "explain_rise",
    "explain_scorecam", "explain_sidu", "explain_smoothgrad", "normalize_attribution", "segment_grid", "upsample",
]
