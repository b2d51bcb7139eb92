"""Bundled perception models and their adversarial objectives."""

from diffppl.models.color import (
    SHADING,
    ColorScene,
    color_loss,
    color_model,
    planck_to_rgb,
    render_patches,
)
from diffppl.models.tables import (
    Camera,
    TableBox,
    make_camera_at,
    perspective_project,
    tables_loss,
    tables_model,
)
from diffppl.models.thermometer import thermometer_model

__all__ = [
    "SHADING",
    "Camera",
    "ColorScene",
    "TableBox",
    "color_loss",
    "color_model",
    "make_camera_at",
    "perspective_project",
    "planck_to_rgb",
    "render_patches",
    "tables_loss",
    "tables_model",
    "thermometer_model",
]
