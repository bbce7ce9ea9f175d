"""Synthetic tactile fingertip: marker-pin membrane under an edge stimulus.

The fingertip pad carries a 5x9 rectangular array of marker pins imaged
by an internal camera.  Frame convention: x runs across the pad (along
the 9-pin rows), y along the 5-pin columns, both in mm with the origin
at the array center.  An edge stimulus is an infinite straight line
contact parameterized by an :class:`EdgePose`:

* ``x``     horizontal offset of the contact line (mm),
* ``y``     position along the edge; irrelevant for an infinite edge and
            never labelled,
* ``z``     indentation depth, 0 at first contact (mm),
* ``phi``   roll about the edge's own axis (deg), modelled as a
            symmetric widening/narrowing of the pressure footprint,
* ``psi``   pitch tilting the contact line out of plane along its length
            (deg); depth then varies linearly along the edge, referenced
            so z = 0 still means first contact,
* ``theta`` yaw of the edge in the pad plane (deg).

Contact model.  The local indentation of the membrane at a pin is the
line depth at that pin's along-edge station times a cosine falloff in
perpendicular distance.  Pins move in plane toward the contact line by
that indentation, capped at the line itself (material piles up against
the indenter instead of crossing it), and are pressed out of plane
toward the camera by the same indentation plus a uniform sink of the
whole membrane.  Unlabelled shear perturbations model the membrane's
memory of the approach motion: a tangential drag proportional to the
local contact weight that leaves the labelled contact geometry
untouched.  The out-of-plane perturbation components (dz, dphi, dpsi)
have no image effect in this quasi-static model.

Image formation is a pinhole projection from ``pad_depth`` below the pin
plane, so pressed markers are magnified radially and rendered larger: a
strong, monotone whole-image depth cue, as in a real internal-camera
sensor.  Markers are bright anti-aliased discs with a conical skirt (the
lit pin shaft) on an exactly black field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import RAW_STAGE, TactileImage

GRID_ROWS = 5
GRID_COLS = 9

DEFAULT_PITCH = 2.0          # mm between neighbouring pins
DEFAULT_PIN_RADIUS = 0.375   # mm, 0.75 mm marker diameter
DEFAULT_RESOLUTION = (480, 270)   # raw render (width, height), 16:9
DEFAULT_PX_PER_MM = 24.0     # projection scale at the undeformed pin plane
DEFAULT_NOISE_SIGMA = 2.0 / 255.0

# Labelled pose components, in manifest and regression order.
POSE_COMPONENTS = ("x", "z", "phi", "psi", "theta")

POSE_UNITS = {"x": "mm", "z": "mm", "phi": "deg", "psi": "deg", "theta": "deg"}

# Uniform sampling ranges for labelled poses.
LABEL_RANGES = {
    "x": (-6.0, 6.0),
    "z": (0.0, 3.0),
    "phi": (-5.0, 5.0),
    "psi": (-10.0, 10.0),
    "theta": (-45.0, 45.0),
}

# Uniform sampling ranges for the unlabelled shear perturbation.
SHEAR_RANGES = {
    "dx": (-2.0, 2.0),
    "dy": (-2.0, 2.0),
    "dz": (-1.0, 1.0),
    "dphi": (-2.0, 2.0),
    "dpsi": (-2.0, 2.0),
    "dtheta": (-2.0, 2.0),
}

# Footprint half-width change per degree of roll.
_ROLL_WIDTH_GAIN = 0.06

# Tangential drag fades to zero below this local indentation, so a
# non-contacting edge cannot move pins.
_SHEAR_GATE_MM = 0.5

# Fraction of the commanded depth by which the whole membrane sinks
# toward the camera, on top of the local contact indentation.
_GLOBAL_SINK = 0.35

# Rendered marker growth per mm of indentation (pressed pins spread).
_BLOB_GROW = 0.15

# Conical skirt of scattered light around each marker: peak intensity
# and radius in mm.  The radius stays below half the pin pitch so rest
# markers threshold to separate components.
_SKIRT_AMP = 0.55
_SKIRT_RADIUS_MM = 0.95


@dataclass(frozen=True)
class EdgePose:
    """Pose of the edge stimulus relative to the fingertip (mm, deg)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    phi: float = 0.0
    psi: float = 0.0
    theta: float = 0.0

    def labels(self) -> np.ndarray:
        """The five labelled components (x, z, phi, psi, theta)."""
        return np.array([getattr(self, c) for c in POSE_COMPONENTS], dtype=np.float64)


@dataclass(frozen=True)
class ShearPerturbation:
    """Unlabelled perturbation of the contact motion."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dphi: float = 0.0
    dpsi: float = 0.0
    dtheta: float = 0.0

    def is_zero(self) -> bool:
        return self == ZERO_SHEAR


ZERO_SHEAR = ShearPerturbation()


@dataclass(frozen=True)
class MembraneParams:
    """Contact-model constants of the compliant pad."""

    falloff_radius: float = 5.0   # mm, perpendicular reach of the contact
    max_depth: float = 3.0        # mm, deepest representable indentation
    shear_coupling: float = 0.5   # fraction of tangential motion retained
    pad_depth: float = 10.0       # mm, camera standoff below the pins

    def __post_init__(self):
        if self.falloff_radius <= 0:
            raise ValueError("falloff_radius must be positive")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")
        if not 0.0 <= self.shear_coupling <= 1.0:
            raise ValueError("shear_coupling must lie in [0, 1]")
        if self.pad_depth < 10.0:
            raise ValueError("pad_depth below 10 mm leaves pins outside the field of view")


@dataclass
class PinField:
    """Rest and displaced marker positions of the 5x9 pin array.

    ``indentations`` holds how far each marker is pressed out of plane
    toward the camera (mm); zero for an undeformed field.
    """

    rest_positions: np.ndarray       # (5, 9, 2) mm
    displaced_positions: np.ndarray  # (5, 9, 2) mm
    pin_radius: float
    indentations: np.ndarray | None = None   # (5, 9) mm toward the camera
    depth_clamped: bool = False

    def __post_init__(self):
        expected = (GRID_ROWS, GRID_COLS, 2)
        self.rest_positions = np.asarray(self.rest_positions, dtype=np.float64)
        self.displaced_positions = np.asarray(self.displaced_positions, dtype=np.float64)
        if self.rest_positions.shape != expected:
            raise ValueError(f"rest_positions must have shape {expected}")
        if self.displaced_positions.shape != expected:
            raise ValueError(f"displaced_positions must have shape {expected}")
        if self.indentations is None:
            self.indentations = np.zeros((GRID_ROWS, GRID_COLS))
        else:
            self.indentations = np.asarray(self.indentations, dtype=np.float64)
            if self.indentations.shape != (GRID_ROWS, GRID_COLS):
                raise ValueError(f"indentations must have shape {(GRID_ROWS, GRID_COLS)}")

    @property
    def n_pins(self) -> int:
        return GRID_ROWS * GRID_COLS

    def displacements(self) -> np.ndarray:
        return self.displaced_positions - self.rest_positions


def rest_pin_field(pitch: float = DEFAULT_PITCH,
                   pin_radius: float = DEFAULT_PIN_RADIUS) -> PinField:
    """Build the undeformed 5x9 lattice centered on the sensor origin."""
    if pitch <= 0:
        raise ValueError(f"pitch must be positive, got {pitch}")
    if pin_radius <= 0:
        raise ValueError(f"pin_radius must be positive, got {pin_radius}")
    xs = (np.arange(GRID_COLS) - (GRID_COLS - 1) / 2.0) * pitch
    ys = (np.arange(GRID_ROWS) - (GRID_ROWS - 1) / 2.0) * pitch
    rest = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    return PinField(rest, rest.copy(), pin_radius)


def _contact_weight(dist: np.ndarray, radius: float) -> np.ndarray:
    """Cosine taper from 1 at the contact line to 0 at ``radius``."""
    scaled = np.minimum(np.abs(dist), radius) / radius
    return 0.5 * (1.0 + np.cos(np.pi * scaled))


def deform_pins(field: PinField, pose: EdgePose,
                shear: ShearPerturbation = ZERO_SHEAR,
                params: MembraneParams = MembraneParams()) -> PinField:
    """Displace the pin array under an edge contact.

    In-plane, each pin moves toward the contact line by the local
    indentation, capped at the line itself; out of plane, it is pressed
    toward the camera by the indentation plus the global membrane sink.
    Depths beyond ``params.max_depth`` are clamped and flagged on the
    returned field.  Zero depth with zero shear returns the rest field
    unchanged.
    """
    if pose.z < 0:
        raise ValueError(f"indentation depth must be non-negative, got {pose.z}")
    z = pose.z
    clamped = False
    if z > params.max_depth:
        z = params.max_depth
        clamped = True

    pins = field.rest_positions.reshape(-1, 2)
    theta = math.radians(pose.theta)
    edge_dir = np.array([-math.sin(theta), math.cos(theta)])
    normal = np.array([math.cos(theta), math.sin(theta)])
    rel = pins - np.array([pose.x, pose.y])
    d_signed = rel @ normal
    t_along = rel @ edge_dir

    # Pitch tilts the contact line along its own length; referencing the
    # tilt to its maximum over the pad keeps z = 0 meaning first contact.
    tilt = math.tan(math.radians(pose.psi)) * t_along
    tilt -= tilt.max()
    depth_line = np.clip(z + tilt, 0.0, params.max_depth)

    radius = params.falloff_radius * (1.0 + _ROLL_WIDTH_GAIN * pose.phi)
    radius = max(radius, 1e-6)
    weight = _contact_weight(d_signed, radius)
    indent = depth_line * weight

    move = np.minimum(indent, np.abs(d_signed))
    disp = -np.sign(d_signed)[:, None] * move[:, None] * normal[None, :]
    if shear.dx != 0.0 or shear.dy != 0.0:
        gate = np.clip(depth_line / _SHEAR_GATE_MM, 0.0, 1.0)
        drag = (params.shear_coupling * weight * gate)[:, None]
        disp = disp + drag * np.array([shear.dx, shear.dy])

    displaced = (pins + disp).reshape(GRID_ROWS, GRID_COLS, 2)
    heights = (indent + _GLOBAL_SINK * z).reshape(GRID_ROWS, GRID_COLS)
    return PinField(field.rest_positions.copy(), displaced, field.pin_radius,
                    indentations=heights, depth_clamped=clamped)


def render_image(field: PinField,
                 resolution: tuple[int, int] = DEFAULT_RESOLUTION,
                 px_per_mm: float = DEFAULT_PX_PER_MM,
                 pad_depth: float = 10.0) -> TactileImage:
    """Render the markers as bright anti-aliased discs on a dark field.

    A pinhole camera sits ``pad_depth`` mm below the undeformed pin
    plane, so an indented marker projects with magnification
    ``pad_depth / (pad_depth - indentation)``: it shifts radially away
    from the image center and its disc grows.  With zero indentation the
    projection is exactly linear at ``px_per_mm``.  Each marker carries a
    conical light skirt narrower than half the pin pitch.  Markers that
    project outside the frame are clipped, not an error; the render is a
    pure function of its inputs.
    """
    w, h = int(resolution[0]), int(resolution[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    img = np.zeros((h, w))
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    positions = field.displaced_positions.reshape(-1, 2)
    heights = field.indentations.reshape(-1)
    for (x_mm, y_mm), z_mm in zip(positions, heights):
        z_mm = min(max(z_mm, 0.0), pad_depth - 1.0)
        scale = px_per_mm * pad_depth / (pad_depth - z_mm)
        u = cx + x_mm * scale
        v = cy + y_mm * scale
        grow = 1.0 + _BLOB_GROW * z_mm
        r_px = field.pin_radius * scale * grow
        s_px = _SKIRT_RADIUS_MM * scale * grow
        reach = max(r_px, s_px)
        lo_u = max(int(math.floor(u - reach - 1.0)), 0)
        hi_u = min(int(math.ceil(u + reach + 1.0)) + 1, w)
        lo_v = max(int(math.floor(v - reach - 1.0)), 0)
        hi_v = min(int(math.ceil(v + reach + 1.0)) + 1, h)
        if lo_u >= hi_u or lo_v >= hi_v:
            continue
        uu = np.arange(lo_u, hi_u, dtype=np.float64) - u
        vv = np.arange(lo_v, hi_v, dtype=np.float64) - v
        dist = np.sqrt(uu[None, :] ** 2 + vv[:, None] ** 2)
        core = np.clip(r_px + 0.5 - dist, 0.0, 1.0)
        skirt = _SKIRT_AMP * np.clip(1.0 - dist / s_px, 0.0, 1.0)
        np.maximum(img[lo_v:hi_v, lo_u:hi_u], np.maximum(core, skirt),
                   out=img[lo_v:hi_v, lo_u:hi_u])
    return TactileImage(img, RAW_STAGE)


def synthesize_contact(pose: EdgePose,
                       shear: ShearPerturbation = ZERO_SHEAR,
                       params: MembraneParams = MembraneParams(),
                       noise_seed=None,
                       noise_sigma: float = DEFAULT_NOISE_SIGMA,
                       pitch: float = DEFAULT_PITCH,
                       pin_radius: float = DEFAULT_PIN_RADIUS,
                       resolution: tuple[int, int] = DEFAULT_RESOLUTION,
                       px_per_mm: float = DEFAULT_PX_PER_MM) -> TactileImage:
    """Deform the rest pin field under ``pose`` and render the raw frame.

    With ``noise_seed`` set, zero-mean Gaussian pixel noise of the given
    sigma is added and clipped back to [0, 1]; the same seed always
    reproduces the same image.  ``noise_seed=None`` renders noise-free.
    """
    rest = rest_pin_field(pitch=pitch, pin_radius=pin_radius)
    deformed = deform_pins(rest, pose, shear, params)
    img = render_image(deformed, resolution=resolution, px_per_mm=px_per_mm,
                       pad_depth=params.pad_depth)
    if noise_seed is not None and noise_sigma > 0.0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(noise_seed)))
        noisy = img.pixels + rng.normal(0.0, noise_sigma, img.pixels.shape)
        img = TactileImage(np.clip(noisy, 0.0, 1.0), RAW_STAGE)
    return img


def sample_pose(rng: np.random.Generator, ranges=None) -> EdgePose:
    """Draw a labelled pose uniformly from the per-component ranges."""
    ranges = dict(LABEL_RANGES if ranges is None else ranges)
    values = {c: float(rng.uniform(*ranges[c])) for c in POSE_COMPONENTS}
    return EdgePose(y=0.0, **values)


def sample_shear(rng: np.random.Generator, ranges=None) -> ShearPerturbation:
    """Draw an unlabelled shear perturbation uniformly from its ranges."""
    ranges = dict(SHEAR_RANGES if ranges is None else ranges)
    values = {name: float(rng.uniform(*bounds)) for name, bounds in ranges.items()}
    return ShearPerturbation(**values)


@dataclass(frozen=True)
class SensorConfig:
    """Bundle of geometry, membrane and render settings for one fingertip."""

    pitch: float = DEFAULT_PITCH
    pin_radius: float = DEFAULT_PIN_RADIUS
    resolution: tuple[int, int] = DEFAULT_RESOLUTION
    px_per_mm: float = DEFAULT_PX_PER_MM
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    membrane: MembraneParams = field(default_factory=MembraneParams)

    def synthesize(self, pose: EdgePose, shear: ShearPerturbation = ZERO_SHEAR,
                   noise_seed=None) -> TactileImage:
        return synthesize_contact(
            pose, shear, self.membrane,
            noise_seed=noise_seed, noise_sigma=self.noise_sigma,
            pitch=self.pitch, pin_radius=self.pin_radius,
            resolution=self.resolution, px_per_mm=self.px_per_mm,
        )

    def reference(self) -> TactileImage:
        """Noise-free render of the undeformed membrane."""
        return self.synthesize(EdgePose())

    def at_depth(self, base_pose: EdgePose, z: float,
                 shear: ShearPerturbation = ZERO_SHEAR,
                 noise_seed=None) -> TactileImage:
        return self.synthesize(replace(base_pose, z=z), shear, noise_seed=noise_seed)
