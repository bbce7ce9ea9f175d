import numpy as np
import pytest
from scipy.ndimage import center_of_mass, label

from softtouch.imaging import RAW_STAGE
from softtouch.sensor import (
    DEFAULT_PX_PER_MM,
    EdgePose,
    LABEL_RANGES,
    MembraneParams,
    POSE_COMPONENTS,
    SHEAR_RANGES,
    ShearPerturbation,
    ZERO_SHEAR,
    deform_pins,
    render_image,
    rest_pin_field,
    sample_pose,
    sample_shear,
    synthesize_contact,
)


class TestRestPinField:
    def test_default_geometry(self):
        field = rest_pin_field(pitch=2.0, pin_radius=0.375)
        assert field.n_pins == 45
        assert field.rest_positions.shape == (5, 9, 2)
        # neighbouring rows and columns sit one pitch apart
        col_step = np.diff(field.rest_positions[0, :, 0])
        row_step = np.diff(field.rest_positions[:, 0, 1])
        assert np.allclose(col_step, 2.0)
        assert np.allclose(row_step, 2.0)
        # 0.75 mm marker diameter
        assert field.pin_radius * 2 == pytest.approx(0.75)

    def test_rest_equals_displaced(self):
        field = rest_pin_field(pitch=1.7, pin_radius=0.2)
        np.testing.assert_array_equal(field.rest_positions, field.displaced_positions)
        assert np.all(field.indentations == 0.0)

    def test_unit_pitch_bounding_box(self):
        # closed form: (cols - 1) * pitch by (rows - 1) * pitch
        field = rest_pin_field(pitch=1.0)
        xs = field.rest_positions[..., 0]
        ys = field.rest_positions[..., 1]
        assert xs.max() - xs.min() == pytest.approx((9 - 1) * 1.0)
        assert ys.max() - ys.min() == pytest.approx((5 - 1) * 1.0)

    def test_centered_on_origin(self):
        field = rest_pin_field()
        assert np.allclose(field.rest_positions.reshape(-1, 2).mean(axis=0), 0.0)

    @pytest.mark.parametrize("pitch,radius", [(0.0, 0.2), (-1.0, 0.2), (2.0, 0.0), (2.0, -0.1)])
    def test_rejects_nonpositive_parameters(self, pitch, radius):
        with pytest.raises(ValueError):
            rest_pin_field(pitch=pitch, pin_radius=radius)


class TestDeformPins:
    def test_no_contact_identity(self):
        field = rest_pin_field()
        out = deform_pins(field, EdgePose(x=1.0, theta=30.0), ZERO_SHEAR)
        np.testing.assert_array_equal(out.displaced_positions, out.rest_positions)
        assert np.all(out.indentations == 0.0)
        assert not out.depth_clamped

    def test_zero_depth_shear_does_not_move_pins(self):
        # with no indentation there is no contact to transmit shear
        field = rest_pin_field()
        shear = ShearPerturbation(dx=2.0, dy=-2.0, dz=1.0, dtheta=2.0)
        out = deform_pins(field, EdgePose(z=0.0), shear)
        np.testing.assert_array_equal(out.displaced_positions, out.rest_positions)

    def test_mirror_symmetry(self):
        field = rest_pin_field()
        pose = EdgePose(x=2.5, z=2.0, phi=3.0, psi=-6.0, theta=0.0)
        mirrored = EdgePose(x=-2.5, z=2.0, phi=3.0, psi=-6.0, theta=0.0)
        disp = deform_pins(field, pose).displacements()
        disp_m = deform_pins(field, mirrored).displacements()
        # reflect the field: columns reverse, x components negate
        expected = disp[:, ::-1].copy()
        expected[..., 0] *= -1
        np.testing.assert_allclose(disp_m, expected, atol=1e-9)

    def test_displacement_monotone_in_depth(self):
        field = rest_pin_field()
        mags = []
        for z in np.arange(0.0, 3.01, 0.5):
            out = deform_pins(field, EdgePose(x=0.5, z=z, theta=10.0))
            mags.append(np.linalg.norm(out.displacements(), axis=-1))
        for lo, hi in zip(mags, mags[1:]):
            assert np.all(hi >= lo - 1e-12)

    def test_every_pin_deeper_means_larger(self):
        # direct evaluation over all 45 pins at two depths, same (x, theta)
        field = rest_pin_field()
        shallow = deform_pins(field, EdgePose(x=1.0, z=1.5))
        deep = deform_pins(field, EdgePose(x=1.0, z=3.0))
        mag_shallow = np.linalg.norm(shallow.displacements(), axis=-1)
        mag_deep = np.linalg.norm(deep.displacements(), axis=-1)
        assert np.all(mag_deep >= mag_shallow - 1e-12)
        assert np.all(deep.indentations >= shallow.indentations - 1e-12)

    def test_depth_beyond_limit_clamps_with_flag(self):
        field = rest_pin_field()
        params = MembraneParams()
        clamped = deform_pins(field, EdgePose(z=5.0), params=params)
        at_limit = deform_pins(field, EdgePose(z=params.max_depth), params=params)
        assert clamped.depth_clamped
        assert not at_limit.depth_clamped
        np.testing.assert_array_equal(clamped.displaced_positions,
                                      at_limit.displaced_positions)

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            deform_pins(rest_pin_field(), EdgePose(z=-0.1))

    def test_falloff_limits_reach(self):
        params = MembraneParams(falloff_radius=3.0)
        out = deform_pins(rest_pin_field(), EdgePose(x=-8.0, z=3.0), params=params)
        mags = np.linalg.norm(out.displacements(), axis=-1).reshape(5, 9)
        # columns further than 3 mm from the contact line at x = -8 see no
        # lateral pull; the column on the line only indents (pile-up cap)
        assert np.all(mags[:, 3:] == 0.0)
        assert np.all(mags[:, 1] > 0.0)
        assert np.all(mags[:, 0] == 0.0)
        assert np.all(out.indentations[:, 0] > 0.0)

    def test_deterministic(self):
        field = rest_pin_field()
        pose = EdgePose(x=0.3, z=1.2, phi=2.0, psi=4.0, theta=25.0)
        shear = ShearPerturbation(dx=0.5, dy=-1.0)
        a = deform_pins(field, pose, shear)
        b = deform_pins(field, pose, shear)
        np.testing.assert_array_equal(a.displaced_positions, b.displaced_positions)
        np.testing.assert_array_equal(a.indentations, b.indentations)


class TestRenderImage:
    def test_rest_render_shows_45_blobs_on_grid(self, sensor, rest_raw):
        cores, n = label(rest_raw.pixels > 0.9)
        assert n == 45
        # blob centroids reproduce the 5x9 lattice up to the pixel grid
        centroids = np.array(center_of_mass(rest_raw.pixels > 0.9, cores,
                                            index=range(1, n + 1)))

        def n_clusters(values, gap=10.0):
            ordered = np.sort(values)
            return 1 + int((np.diff(ordered) > gap).sum())

        assert n_clusters(centroids[:, 1]) == 9
        assert n_clusters(centroids[:, 0]) == 5

    def test_bit_identical_renders(self):
        field = deform_pins(rest_pin_field(), EdgePose(x=0.5, z=2.0))
        a = render_image(field)
        b = render_image(field)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_centroid_shift_matches_projection_scale(self):
        # centroid-extraction oracle: displacing one pin by +2 mm in x
        # moves its blob centroid by 2 mm times the projection scale.
        # A 3 mm pitch keeps the moved marker core clear of its
        # neighbours; masking at 0.9 keeps the skirts out of the sum.
        field = rest_pin_field(pitch=3.0)
        moved = rest_pin_field(pitch=3.0)
        moved.displaced_positions[2, 4, 0] += 2.0
        img_a = render_image(field)
        img_b = render_image(moved)

        def core_centroid(img, x0, y0, half=14):
            yy, xx = np.mgrid[0:img.height, 0:img.width]
            region = (np.abs(xx - x0) <= half) & (np.abs(yy - y0) <= half)
            weights = img.pixels * (img.pixels > 0.9) * region
            total = weights.sum()
            assert total > 0
            return (xx * weights).sum() / total, (yy * weights).sum() / total

        cx = (img_a.width - 1) / 2
        cy = (img_a.height - 1) / 2
        shift_px = 2.0 * DEFAULT_PX_PER_MM
        x_a, y_a = core_centroid(img_a, cx, cy)
        x_b, y_b = core_centroid(img_b, cx + shift_px, cy)
        assert x_b - x_a == pytest.approx(shift_px, abs=0.05)
        assert y_b - y_a == pytest.approx(0.0, abs=0.05)

    def test_offscreen_pin_clipped_not_error(self):
        field = rest_pin_field()
        field.displaced_positions[0, 0] = (500.0, 500.0)
        img = render_image(field)
        cores, n = label(img.pixels > 0.9)
        assert n == 44

    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            render_image(rest_pin_field(), resolution=(0, 270))


class TestSynthesizeContact:
    def test_same_seed_identical(self):
        pose = EdgePose(x=1.0, z=1.5, theta=15.0)
        a = synthesize_contact(pose, noise_seed=(3, 7))
        b = synthesize_contact(pose, noise_seed=(3, 7))
        np.testing.assert_array_equal(a.pixels, b.pixels)
        c = synthesize_contact(pose, noise_seed=(3, 8))
        assert not np.array_equal(a.pixels, c.pixels)

    def test_rest_contact_no_noise_equals_reference(self, sensor, rest_raw):
        img = sensor.synthesize(EdgePose(z=0.0))
        np.testing.assert_array_equal(img.pixels, rest_raw.pixels)

    def test_stage_is_raw(self):
        assert synthesize_contact(EdgePose(z=1.0)).stage == RAW_STAGE


class TestSampling:
    def test_draws_stay_inside_ranges(self, rng):
        poses = [sample_pose(rng) for _ in range(10000)]
        for c in POSE_COMPONENTS:
            values = np.array([getattr(p, c) for p in poses])
            lo, hi = LABEL_RANGES[c]
            assert values.min() >= lo
            assert values.max() <= hi
            # 10k uniform draws cover the range ends closely
            width = hi - lo
            assert values.min() <= lo + 0.01 * width
            assert values.max() >= hi - 0.01 * width
        shears = [sample_shear(rng) for _ in range(2000)]
        for name, (lo, hi) in SHEAR_RANGES.items():
            values = np.array([getattr(s, name) for s in shears])
            assert values.min() >= lo and values.max() <= hi

    def test_along_edge_component_not_sampled(self, rng):
        assert all(sample_pose(rng).y == 0.0 for _ in range(20))


class TestMembraneParams:
    @pytest.mark.parametrize("kwargs", [
        dict(falloff_radius=0.0),
        dict(max_depth=-1.0),
        dict(shear_coupling=1.5),
        dict(pad_depth=5.0),
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            MembraneParams(**kwargs)
