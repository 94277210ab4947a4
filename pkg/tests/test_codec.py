import numpy as np
import pytest

from maskref.codec import (
    CodecConfig,
    VideoLatent,
    decode_video,
    encode_reference,
    encode_text,
    encode_video,
    latent_frames,
    load_latent,
    resize_mask_to_latent,
    save_latent,
    zero_video_latent,
)
from maskref.exceptions import ContractError
from maskref.mask_gen import BinaryMask


@pytest.mark.parametrize("frames,expected", [(1, 1), (5, 2), (9, 3), (17, 5), (81, 21), (2, 1), (4, 1), (6, 2)])
def test_latent_frame_count(frames, expected):
    assert latent_frames(frames) == expected


@pytest.mark.parametrize("frames", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("patch", [1, 2, 4])
def test_round_trip_any_length(frames, patch, rng):
    video = rng.uniform(-1, 1, (frames, 8, 12, 3))
    config = CodecConfig(patch, projection_seed=3)
    latent = encode_video(video, config)
    assert latent.data.shape == (latent_frames(frames), 8 // patch, 12 // patch, 12 * patch * patch)
    assert np.abs(decode_video(latent, config, clamp=False) - video).max() < 1e-12


def test_encoding_is_orthonormal(rng):
    a, b = rng.uniform(-1, 1, (2, 5, 4, 4, 3))
    za, zb = encode_video(a).data, encode_video(b).data
    # leading pad repeats frame 0 three times, so frame 0 counts four times
    weights = np.array([4, 1, 1, 1, 1])[:, None, None, None]
    assert np.isclose((za * zb).sum(), (weights * a * b).sum())


def test_single_frame_block_layout():
    video = np.zeros((1, 2, 2, 3))
    video[0, 0, 1, 2] = 0.5
    config = CodecConfig(2)
    latent = encode_video(video, config).data
    # undo the projection and find the one nonzero coefficient
    raw = decode_video(VideoLatent(latent, 1), config, clamp=False)
    assert raw[0, 0, 1, 2] == pytest.approx(0.5)
    assert np.count_nonzero(np.abs(raw) > 1e-12) == 1


def test_encode_reference_matches_single_frame_video(rng):
    image = rng.uniform(-1, 1, (8, 8, 3))
    assert np.array_equal(encode_reference(image), encode_video(image[None]).data[0])


def test_zero_latent_is_a_copy():
    a = zero_video_latent(5, 8, 8)
    a[...] = 7
    assert not zero_video_latent(5, 8, 8).any()


def test_codec_rejects_bad_inputs(rng):
    with pytest.raises(ContractError):
        encode_video(rng.uniform(-1, 1, (2, 7, 8, 3)))
    with pytest.raises(ContractError):
        encode_video(np.full((1, 4, 4, 3), 2.0))
    with pytest.raises(ContractError):
        VideoLatent(np.zeros((2, 2, 2, 48)), 1)


def test_decode_clamps():
    latent = encode_video(np.zeros((1, 2, 2, 3)))
    big = VideoLatent(latent.data + 10.0, 1)
    assert np.abs(decode_video(big)).max() <= 1.0


def test_text_encoding():
    a = encode_text("A red circle")
    b = encode_text("a  RED circle")
    assert a.tokens == 3 and a.dim == 32
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(encode_text("a blue circle").data, a.data)
    null = encode_text("")
    assert null.tokens == 1
    assert np.array_equal(null.data, encode_text("   ").data)
    assert not np.array_equal(encode_text("x", vocab_seed=1).data, encode_text("x").data)


def test_mask_to_latent_max_pools():
    data = np.zeros((4, 6), dtype=np.uint8)
    data[1, 4] = 1
    out = resize_mask_to_latent(BinaryMask(data), 2, 3)
    assert out.shape == (2, 3, 4)
    expected = np.zeros((2, 3))
    expected[0, 2] = 1
    assert np.array_equal(out[..., 0], expected)
    assert np.array_equal(out[..., 3], expected)
    with pytest.raises(ContractError):
        resize_mask_to_latent(BinaryMask(data), 3, 3)


def test_latent_file_round_trip(tmp_path, rng):
    config = CodecConfig(2, projection_seed=2**40 + 5)
    latent = encode_video(rng.uniform(-1, 1, (9, 4, 4, 3)), config)
    path = tmp_path / "z.lat"
    save_latent(path, latent, config)
    back, seed = load_latent(path)
    assert seed == config.projection_seed
    assert back.source_frames == 9
    np.testing.assert_allclose(back.data, latent.data, atol=1e-6)
    path.write_bytes(b"\0" * 40)
    with pytest.raises(ContractError):
        load_latent(path)
