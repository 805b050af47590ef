import numpy as np
import pytest

from streamtse.audio import MelFrames
from streamtse.config import ModelConfig
from streamtse.encoder import EncoderState, encode_chunk, encode_reference, encoder_forward
from streamtse.errors import EmptyReference, ShapeError
from streamtse.model import Models


def _mel(rng, n):
    return rng.normal(-1.5, 4.5, (n, 40))


@pytest.mark.parametrize("window", [None, 3])
def test_chunked_encoding_equals_offline(models, rng, window):
    m = models if window is None else Models.create(ModelConfig(enc_window=window))
    mel = _mel(rng, 12)
    full = encoder_forward(mel, m.tensors, m.cfg)[0].data
    state, rows = EncoderState.initial(m.cfg), []
    for k, (lo, hi) in enumerate([(0, 2), (2, 7), (7, 12)], start=1):
        c, state = encode_chunk(MelFrames(mel[lo:hi]), state, m.tensors, m.cfg, k, hi - lo)
        assert c.step == k
        rows.append(c.frames)
    assert np.abs(np.vstack(rows) - full).max() <= 1e-12
    assert state.n_frames == 12


def test_encoder_is_causal(models, rng):
    mel = _mel(rng, 8)
    alt = mel.copy()
    alt[5:] = _mel(rng, 3)
    a = encoder_forward(mel, models.tensors, models.cfg)[0].data
    b = encoder_forward(alt, models.tensors, models.cfg)[0].data
    assert np.array_equal(a[:5], b[:5]) and not np.allclose(a[5:], b[5:])


def test_window_limits_context(rng):
    m = Models.create(ModelConfig(enc_window=2, conv_width=1))
    mel = _mel(rng, 6)
    alt = mel.copy()
    alt[0] += 5.0
    a = encoder_forward(mel, m.tensors, m.cfg)[0].data
    b = encoder_forward(alt, m.tensors, m.cfg)[0].data
    # frame 2 sees frames 1..2 only through one layer with a 2-frame window
    assert not np.allclose(a[1], b[1]) and np.array_equal(a[2:], b[2:])


def test_reference_and_mixture_share_weights(models, rng):
    mel = _mel(rng, 5)
    ref = encode_reference(MelFrames(mel), models.tensors, models.cfg)
    mix, _ = encode_chunk(MelFrames(mel), EncoderState.initial(models.cfg), models.tensors, models.cfg, 1)
    assert np.array_equal(ref.frames, mix.frames)
    assert ref.frames.shape == (5, models.cfg.d_model)


def test_encoder_errors(models, rng):
    with pytest.raises(ShapeError):
        encoder_forward(rng.normal(size=(3, 39)), models.tensors, models.cfg)
    with pytest.raises(EmptyReference):
        encode_reference(MelFrames(np.zeros((0, 40))), models.tensors, models.cfg)
    with pytest.raises(ShapeError):
        encode_chunk(MelFrames(_mel(rng, 3)), EncoderState.initial(models.cfg), models.tensors,
                     models.cfg, 1, frames_per_chunk=4)
