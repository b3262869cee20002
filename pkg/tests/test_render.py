import math
from pathlib import Path

import numpy as np
import pytest

from tfevolve.genome import Gene, Genome, TransferFunctionLUT, bake_lut
from tfevolve.render import (
    Camera,
    NoFeatureError,
    RenderError,
    RenderSettings,
    camera_from_orbit,
    gene_visibilities,
    generate_rays,
    image_from_png_bytes,
    isolate_gene,
    pick_feature,
    raymarch,
    render,
    render_feature_isolation,
)
from tfevolve.volume import VolumeDataset, VolumeDescriptor, make_synthetic

GOLDEN_DIR = Path(__file__).parent / "golden"


def dataset_from_values(values, spacing=(1.0, 1.0, 1.0)):
    desc = VolumeDescriptor(
        dims=values.shape,
        spacing=spacing,
        scalar_kind="u8",
        endianness="little",
        data_path="unused.raw",
    )
    return VolumeDataset(
        descriptor=desc,
        values=np.ascontiguousarray(values, dtype=np.float64),
        raw_min=0.0,
        raw_max=255.0,
    )


def empty_lut(resolution=256):
    return TransferFunctionLUT(
        rgb=np.zeros((resolution, 3)), opacity=np.zeros(resolution)
    )


def lut_with_bins(bins, resolution=256):
    """LUT that is transparent everywhere except the given {index: (rgb, a)}."""
    rgb = np.zeros((resolution, 3))
    opacity = np.zeros(resolution)
    for idx, (color, a) in bins.items():
        rgb[idx] = color
        opacity[idx] = a
    return TransferFunctionLUT(rgb=rgb, opacity=opacity)


def two_layer_volume():
    """16 z-layers: back half (z<8) at 0.25, front half at 0.75."""
    values = np.empty((8, 8, 16))
    values[:, :, :8] = 0.25
    values[:, :, 8:] = 0.75
    return dataset_from_values(values)


def down_z_camera(volume, projection="orthographic"):
    """Looks along -z through the lateral center of the volume."""
    ex = volume.extent
    cx, cy = ex[0] / 2.0, ex[1] / 2.0
    return Camera(
        position=(cx, cy, ex[2] + 25.0),
        target=(cx, cy, 0.0),
        projection=projection,
    )


def test_camera_rejects_degenerate_setups():
    with pytest.raises(RenderError):
        Camera(position=(0, 0, 0), target=(0, 0, 0))
    with pytest.raises(RenderError):
        Camera(position=(0, 0, 5), target=(0, 0, 0), up=(0, 0, 1))
    with pytest.raises(RenderError):
        Camera(position=(0, 0, 5), target=(0, 0, 0), vertical_fov=0.0)
    with pytest.raises(RenderError):
        Camera(position=(0, 0, 5), target=(0, 0, 0), projection="isometric")


def test_settings_reject_bad_values():
    with pytest.raises(RenderError):
        RenderSettings(step_world=0.0)
    with pytest.raises(RenderError):
        RenderSettings(early_termination_alpha=0.0)
    with pytest.raises(RenderError):
        RenderSettings(shading="phong")


def test_generate_rays_shapes_and_units():
    cam = Camera(position=(0, 0, 5), target=(0, 0, 0))
    origins, dirs = generate_rays(cam, 7, 5)
    assert origins.shape == (35, 3)
    assert dirs.shape == (35, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    # Center pixel of an odd grid looks straight down the view axis.
    center = 2 * 7 + 3
    assert np.allclose(dirs[center], (0, 0, -1))


def test_orthographic_rays_are_parallel():
    cam = Camera(position=(0, 0, 5), target=(0, 0, 0), projection="orthographic")
    origins, dirs = generate_rays(cam, 4, 4)
    assert np.allclose(dirs, dirs[0])
    assert not np.allclose(origins, origins[0])


def test_empty_lut_renders_background():
    volume = make_synthetic("ramp", (8, 8, 8))
    cam = down_z_camera(volume)
    settings = RenderSettings(background=(0.1, 0.2, 0.3), shading="none")
    img = render(volume, empty_lut(), cam, settings, 9, 9)
    expected = np.rint(np.array([0.1, 0.2, 0.3]) * 255).astype(np.uint8)
    assert (img.pixels[..., :3] == expected).all()
    assert (img.pixels[..., 3] == 255).all()


def test_fully_opaque_front_slab_hides_everything_behind():
    volume = make_synthetic("slab_stack", (12, 12, 15))
    cam = down_z_camera(volume)
    # slab_stack's front (high z) slab sits at value 0.85 -> LUT bin 217.
    lut = lut_with_bins({217: ((1.0, 1.0, 1.0), 1.0), 64: ((1.0, 0.0, 0.0), 1.0)})
    rgb, alpha = raymarch(volume, lut, cam, RenderSettings(shading="none"), 9, 9)
    assert alpha[4, 4] == 1.0
    assert tuple(rgb[4, 4]) == (1.0, 1.0, 1.0)


def test_two_layer_compositing_matches_hand_computation():
    # Seven unit-step samples per half-layer; per-sample opacity chosen so
    # each layer accumulates exactly 0.5. Front red over back blue:
    # rgb = 0.5*red + 0.5*0.5*blue, alpha = 1 - 0.5*0.5.
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    a = 1.0 - 0.5 ** (1.0 / 7.0)
    lut = lut_with_bins({191: ((1.0, 0.0, 0.0), a), 64: ((0.0, 0.0, 1.0), a)})
    rgb, alpha = raymarch(volume, lut, cam, RenderSettings(shading="none"), 9, 9)
    assert abs(alpha[4, 4] - 0.75) <= 1 / 255
    assert abs(rgb[4, 4, 0] - 0.5) <= 1 / 255
    assert abs(rgb[4, 4, 1] - 0.0) <= 1 / 255
    assert abs(rgb[4, 4, 2] - 0.25) <= 1 / 255


def test_perspective_center_ray_matches_orthographic():
    volume = two_layer_volume()
    a = 1.0 - 0.5 ** (1.0 / 7.0)
    lut = lut_with_bins({191: ((1.0, 0.0, 0.0), a), 64: ((0.0, 0.0, 1.0), a)})
    settings = RenderSettings(shading="none")
    _, alpha_o = raymarch(volume, lut, down_z_camera(volume), settings, 9, 9)
    _, alpha_p = raymarch(
        volume, lut, down_z_camera(volume, "perspective"), settings, 9, 9
    )
    assert abs(alpha_p[4, 4] - alpha_o[4, 4]) < 1e-9


def test_halving_opacity_never_increases_pixel_alpha():
    volume = make_synthetic("nested_spheres", (16, 16, 16))
    cam = camera_from_orbit(volume)
    genome = Genome(
        id="m1",
        genes=(
            Gene(mu=0.25, sigma=0.05, w=0.6, color=(1, 0, 0)),
            Gene(mu=0.85, sigma=0.05, w=0.8, color=(0, 1, 0)),
        ),
    )
    full = bake_lut(genome)
    half = TransferFunctionLUT(rgb=full.rgb.copy(), opacity=full.opacity * 0.5)
    settings = RenderSettings(shading="none")
    _, alpha_full = raymarch(volume, full, cam, settings, 17, 17)
    _, alpha_half = raymarch(volume, half, cam, settings, 17, 17)
    assert (alpha_half <= alpha_full + 1e-12).all()
    assert alpha_half[8, 8] < alpha_full[8, 8]


def test_premultiplied_rgb_never_exceeds_alpha():
    volume = make_synthetic("nested_spheres", (16, 16, 16))
    cam = camera_from_orbit(volume)
    lut = bake_lut(Genome(id="m2", genes=(Gene(mu=0.55, sigma=0.1, w=0.7, color=(1, 1, 0.5)),)))
    rgb, alpha = raymarch(volume, lut, cam, RenderSettings(), 15, 15)
    assert (alpha >= 0).all() and (alpha <= 1).all()
    assert (rgb <= alpha[..., None] + 1e-9).all()


def test_step_halving_changes_accumulated_alpha_only_slightly():
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    lut = lut_with_bins({191: ((1.0, 1.0, 1.0), 0.3), 64: ((1.0, 1.0, 1.0), 0.3)})
    settings_1 = RenderSettings(step_world=1.0, shading="none")
    settings_2 = RenderSettings(step_world=0.5, shading="none")
    _, alpha_1 = raymarch(volume, lut, cam, settings_1, 9, 9)
    _, alpha_2 = raymarch(volume, lut, cam, settings_2, 9, 9)
    assert abs(alpha_1[4, 4] - alpha_2[4, 4]) < 0.02


def test_early_termination_caps_work_without_changing_result_much():
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    lut = lut_with_bins({191: ((1.0, 0.0, 0.0), 0.9), 64: ((0.0, 0.0, 1.0), 0.9)})
    settings = RenderSettings(shading="none")
    rgb, alpha = raymarch(volume, lut, cam, settings, 9, 9)
    # Seven samples at 0.9 alpha pass 0.99 quickly; blue never contributes.
    assert alpha[4, 4] >= 0.99
    assert rgb[4, 4, 2] == 0.0


def test_lambert_shading_darkens_but_keeps_coverage():
    volume = make_synthetic("nested_spheres", (16, 16, 16))
    cam = camera_from_orbit(volume)
    lut = bake_lut(Genome(id="m3", genes=(Gene(mu=0.85, sigma=0.04, w=0.9, color=(1, 1, 1)),)))
    flat_rgb, flat_a = raymarch(volume, lut, cam, RenderSettings(shading="none"), 17, 17)
    lit_rgb, lit_a = raymarch(volume, lut, cam, RenderSettings(shading="lambert"), 17, 17)
    assert np.allclose(flat_a, lit_a)
    assert (lit_rgb <= flat_rgb + 1e-12).all()
    assert lit_rgb.sum() > 0


def test_worker_count_does_not_change_pixels():
    volume = make_synthetic("nested_spheres", (12, 12, 12))
    cam = camera_from_orbit(volume)
    lut = bake_lut(Genome(id="m4", genes=(Gene(mu=0.55, sigma=0.08, w=0.6, color=(0.2, 0.7, 0.9)),)))
    settings = RenderSettings()
    img_1 = render(volume, lut, cam, settings, 13, 11, workers=1)
    img_3 = render(volume, lut, cam, settings, 13, 11, workers=3)
    assert img_1.pixels.tobytes() == img_3.pixels.tobytes()


def test_png_round_trip_preserves_pixels():
    volume = make_synthetic("ramp", (8, 8, 8))
    cam = camera_from_orbit(volume)
    lut = bake_lut(Genome(id="m5", genes=(Gene(mu=0.5, sigma=0.1, w=0.5, color=(1, 0.5, 0)),)))
    img = render(volume, lut, cam, RenderSettings(), 16, 12)
    back = image_from_png_bytes(img.to_png_bytes())
    assert back.width == 16 and back.height == 12
    assert (back.pixels == img.pixels).all()


def test_render_rejects_empty_image():
    volume = make_synthetic("ramp", (4, 4, 4))
    cam = camera_from_orbit(volume)
    with pytest.raises(RenderError):
        render(volume, empty_lut(), cam, RenderSettings(), 0, 4)


def test_golden_render_is_stable():
    volume = make_synthetic("nested_spheres", (32, 32, 32))
    cam = camera_from_orbit(volume)
    genome = Genome(
        id="gold",
        genes=(
            Gene(mu=0.25, sigma=0.03, w=0.25, color=(0.2, 0.4, 0.9)),
            Gene(mu=0.55, sigma=0.03, w=0.5, color=(0.9, 0.7, 0.2)),
            Gene(mu=0.85, sigma=0.03, w=0.9, color=(0.9, 0.2, 0.2)),
        ),
    )
    img = render(volume, bake_lut(genome), cam, RenderSettings(), 64, 64)
    golden = GOLDEN_DIR / "render_nested_64.png"
    if not golden.exists():
        golden.parent.mkdir(parents=True, exist_ok=True)
        golden.write_bytes(img.to_png_bytes())
    assert img.to_png_bytes() == golden.read_bytes()


def test_gene_visibility_prefers_occluding_feature():
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    genome = Genome(
        id="p1",
        genes=(
            Gene(mu=0.25, sigma=0.02, w=0.9, color=(0, 0, 1)),  # back layer
            Gene(mu=0.75, sigma=0.02, w=0.9, color=(1, 0, 0)),  # front layer
        ),
    )
    settings = RenderSettings(shading="none")
    vis = gene_visibilities(volume, genome, cam, settings, (4, 4), 9, 9)
    assert vis[1] > vis[0]
    assert pick_feature(volume, genome, cam, settings, (4, 4), 9, 9) == 1


def test_pick_feature_sees_back_feature_when_front_is_faint():
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    genome = Genome(
        id="p2",
        genes=(
            Gene(mu=0.25, sigma=0.02, w=0.9, color=(0, 0, 1)),
            Gene(mu=0.75, sigma=0.02, w=0.01, color=(1, 0, 0)),
        ),
    )
    settings = RenderSettings(shading="none")
    assert pick_feature(volume, genome, cam, settings, (4, 4), 9, 9) == 0


def test_pick_feature_raises_when_ray_hits_nothing():
    volume = two_layer_volume()
    cam = down_z_camera(volume)
    genome = Genome(
        id="p3", genes=(Gene(mu=0.99, sigma=0.005, w=0.9, color=(1, 1, 1)),)
    )
    with pytest.raises(NoFeatureError):
        pick_feature(volume, genome, cam, RenderSettings(shading="none"), (4, 4), 9, 9)
    with pytest.raises(RenderError):
        pick_feature(volume, genome, cam, RenderSettings(), (9, 0), 9, 9)


def test_isolation_matches_manually_muted_genome():
    volume = make_synthetic("nested_spheres", (16, 16, 16))
    cam = camera_from_orbit(volume)
    genome = Genome(
        id="iso",
        genes=(
            Gene(mu=0.25, sigma=0.04, w=0.5, color=(0, 0, 1)),
            Gene(mu=0.85, sigma=0.04, w=0.8, color=(1, 0, 0)),
        ),
    )
    settings = RenderSettings()
    img = render_feature_isolation(volume, genome, 0, cam, settings, 15, 15)
    muted = isolate_gene(genome, 0)
    assert [g.w for g in muted.genes] == [0.5, 0.0]
    expected = render(volume, bake_lut(muted), cam, settings, 15, 15)
    assert img.pixels.tobytes() == expected.pixels.tobytes()
    with pytest.raises(RenderError):
        isolate_gene(genome, 2)


def test_orbit_camera_looks_at_volume_center():
    volume = make_synthetic("nested_spheres", (16, 16, 16))
    cam = camera_from_orbit(volume, yaw_deg=10.0, pitch_deg=-20.0, dist=2.0)
    center = volume.extent / 2.0
    assert np.allclose(cam.target, center)
    diag = math.sqrt(float((volume.extent**2).sum()))
    assert np.isclose(np.linalg.norm(np.subtract(cam.position, cam.target)), 2.0 * diag)
