import numpy as np
import pytest

from se3flow.providers import (
    FileContextProvider,
    FileFeatureProvider,
    ReferenceContextProvider,
    ReferenceFeatureProvider,
    export_provider_rasters,
    handcrafted_features,
)
from se3flow.update import CONTEXT_DIM, HIDDEN_DIM

FACTORS = (16, 8, 4)


def test_reference_features_deterministic_and_shaped(small_scene):
    fp = ReferenceFeatureProvider()
    for f in FACTORS:
        a = fp.provide(small_scene.frame1, f)
        assert a.shape == (64 // f, 64 // f, fp.channels)
        assert a.tobytes() == fp.provide(small_scene.frame1, f).tobytes()
        assert np.all(np.isfinite(a))


def test_handcrafted_features_flat_image():
    rgb = np.full((8, 8, 3), 0.5)
    feats = handcrafted_features(rgb, 2)
    assert np.array_equal(feats, np.zeros((4, 4, 13)))


def test_reference_context_shapes(small_scene):
    cp = ReferenceContextProvider()
    for f in FACTORS:
        ctx = cp.provide(small_scene.frame1, f)
        assert ctx.con1.shape == (64 // f, 64 // f, HIDDEN_DIM)
        assert ctx.con2.shape == (64 // f, 64 // f, CONTEXT_DIM)
        assert np.all(ctx.con2 >= 0)
    again = ReferenceContextProvider().provide(small_scene.frame1, 4)
    assert again.con1.tobytes() == cp.provide(small_scene.frame1, 4).con1.tobytes()
    other = ReferenceContextProvider(seed=1).provide(small_scene.frame1, 4)
    assert not np.array_equal(other.con1, again.con1)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_file_providers_round_trip(small_scene, tmp_path, dtype):
    sc = small_scene
    fp, cp = ReferenceFeatureProvider(), ReferenceContextProvider()
    export_provider_rasters(tmp_path, [sc.frame1, sc.frame2], FACTORS, fp, cp, dtype=dtype)
    ffp, fcp = FileFeatureProvider(tmp_path), FileContextProvider(tmp_path)
    for f in FACTORS:
        for frame in (sc.frame1, sc.frame2):
            ref = fp.provide(frame, f).astype(dtype)
            got = ffp.provide(frame, f)
            assert got.astype(dtype).tobytes() == ref.tobytes()
        ctx = fcp.provide(sc.frame1, f)
        assert ctx.con1.astype(dtype).tobytes() == cp.provide(sc.frame1, f).con1.astype(dtype).tobytes()


def test_file_providers_missing(small_scene, tmp_path):
    with pytest.raises(FileNotFoundError, match="features_s8"):
        FileFeatureProvider(tmp_path).provide(small_scene.frame1, 8)
    with pytest.raises(FileNotFoundError, match="con1_s8"):
        FileContextProvider(tmp_path).provide(small_scene.frame1, 8)
