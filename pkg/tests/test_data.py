import numpy as np
import pytest

from maskref.data import (
    PALETTE,
    ShapeState,
    caption_for,
    direction_of,
    load_dataset,
    load_image,
    make_grid,
    render_frame,
    save_dataset,
    save_image,
    shape_coverage,
    step_shape,
    synth_dataset,
    to_uint8,
)
from maskref.exceptions import ContractError


def test_directions():
    assert direction_of(1, 0) == "right"
    assert direction_of(0, 1) == "down"
    assert direction_of(-1, -1) == "up-left"
    assert direction_of(0, 0) == "nowhere"


def test_caption_mentions_every_shape():
    sample = synth_dataset(1, 3, 16, 16, seed=0, max_shapes=2)[0]
    for shape in sample.scene.shapes:
        assert f"a {shape.color} {shape.kind}" in sample.caption
    assert sample.caption.endswith(f"on a {sample.scene.background} background")


def test_static_shape_caption():
    from maskref.data import Scene

    scene = Scene("gray", (ShapeState("circle", "red", 5, 5, 2, 0.0, 0.0),))
    assert caption_for(scene) == "a red circle standing still on a gray background"


def test_bounce_reverses_velocity():
    s = ShapeState("circle", "red", 15.0, 8.0, 2.0, 1.0, 0.0)
    nxt = step_shape(s, 16, 16)
    assert nxt.vx == -1.0 and nxt.x == 14.0


def test_coverage_of_full_square():
    s = ShapeState("square", "red", 8.0, 8.0, 4 * np.sqrt(2), 0, 0)
    cov = shape_coverage(s, 16, 16)
    assert cov[4:12, 4:12].min() == 1.0 and cov.sum() == pytest.approx(64)


def test_render_uses_palette_color():
    s = ShapeState("circle", "blue", 8.0, 8.0, 4.0, 0, 0)
    frame = render_frame("white", [s], 16, 16)
    assert np.allclose(frame[8, 8], np.array(PALETTE["blue"]) / 127.5 - 1)
    assert np.allclose(frame[0, 0], 1.0)


def test_dataset_is_deterministic_and_prefix_stable():
    a = synth_dataset(4, 5, 16, 16, seed=3)
    b = synth_dataset(6, 5, 16, 16, seed=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.video, y.video) and x.caption == y.caption
    assert a[0].video.shape == (5, 16, 16, 3)
    assert np.abs(a[0].video).max() <= 1.0
    with pytest.raises(ContractError):
        synth_dataset(1, 0)


def test_dataset_files_round_trip(tmp_path):
    samples = synth_dataset(2, 3, 8, 8, seed=1)
    save_dataset(tmp_path, samples)
    back = load_dataset(tmp_path)
    assert [s.caption for s in back] == [s.caption for s in samples]
    for s, t in zip(samples, back):
        assert np.abs(s.video - t.video).max() <= 1 / 127.5 + 1e-9
    with pytest.raises(ContractError):
        load_dataset(tmp_path / "video_00000")


def test_image_round_trip_is_exact_on_uint8_grid(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    save_image(tmp_path / "a.png", img)
    assert np.array_equal(to_uint8(load_image(tmp_path / "a.png")), img)


def test_make_grid_layout():
    tiles = [np.zeros((2, 3, 3)), np.ones((2, 3)).astype(np.uint8) * 255, np.zeros((2, 3, 3))]
    sheet = make_grid(tiles, cols=2, pad=1)
    assert sheet.shape == (2 * 3 + 1, 2 * 4 + 1, 3)
    assert (sheet[1:3, 5:8] == 255).all()
    assert (sheet[1:3, 1:4] == 128).all()
    with pytest.raises(ContractError):
        make_grid([])
