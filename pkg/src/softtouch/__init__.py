"""Simulated tactile fingertip and touch-driven grasp control.

Subpackages by capability:

* :mod:`softtouch.sensor`      marker-pin membrane simulation and rendering
* :mod:`softtouch.imaging`     image pipeline and the SSIM deformation measure
* :mod:`softtouch.nn`          minimal convolutional network with backprop
* :mod:`softtouch.posenet`     labelled contact datasets and edge-pose regression
* :mod:`softtouch.control`     actuator, plant profiles and feedback controllers
* :mod:`softtouch.experiments` end-to-end experiment runners and artifacts
"""

__version__ = "0.1.0"

from .imaging import (
    DeformationMeasure,
    PROCESSED_SHAPE,
    PROCESSED_STAGE,
    RAW_STAGE,
    TactileImage,
    adaptive_threshold,
    deformation,
    preprocess,
    rms_intensity_change,
    ssim,
    subsample_crop,
)
from .sensor import (
    EdgePose,
    LABEL_RANGES,
    MembraneParams,
    PinField,
    POSE_COMPONENTS,
    SHEAR_RANGES,
    SensorConfig,
    ShearPerturbation,
    ZERO_SHEAR,
    deform_pins,
    render_image,
    rest_pin_field,
    sample_pose,
    sample_shear,
    synthesize_contact,
)
