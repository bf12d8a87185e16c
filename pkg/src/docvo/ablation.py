"""Configurations of the ablation rows (a)-(h): masks, loss and window size."""

from __future__ import annotations

from .photometric import EnergyConfig

# row: (explainability mask, occlusion mask, loss, frames, label)
ABLATION_ROWS = {
    "a": (False, False, "truncated_l1", 2, "DOC w/o mask"),
    "b": (True, False, "truncated_l1", 2, "w/ explainability mask"),
    "c": (False, True, "truncated_l1", 2, "w/ occlusion mask"),
    "d": (True, True, "l1_untruncated", 2, "DOC w/o truncation"),
    "e": (True, True, "ssim", 2, "DOC w/ SSIM"),
    "f": (True, True, "truncated_l1", 2, "DOC"),
    "g": (True, True, "ssim", 3, "DOC+ w/ SSIM"),
    "h": (True, True, "truncated_l1", 3, "DOC+"),
}


def ablation_config(row: str, base: EnergyConfig | None = None) -> EnergyConfig:
    """Energy configuration of ablation row ``row``; other fields come from ``base``."""
    if row not in ABLATION_ROWS:
        raise ValueError(f"unknown ablation row {row!r}, expected one of {''.join(ABLATION_ROWS)}")
    expl, occ, loss, frames, _ = ABLATION_ROWS[row]
    base = base or EnergyConfig()
    return EnergyConfig(
        loss=loss,
        use_occlusion_mask=occ,
        use_explainability_mask=expl,
        d_m=base.d_m,
        alpha=base.alpha,
        frames=frames,
        occlusion_slack=base.occlusion_slack,
        occlusion_literal=base.occlusion_literal,
    )
