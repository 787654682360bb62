import numpy as np
import pytest

from monohuman import tensor as T
from monohuman.camera import four_orthogonal_views
from monohuman.net import (ReconNet, ReconNetConfig, ViewBundle, head_to_gaussians, init_params, net_forward,
                           tap_distance)
from monohuman.tensor import Tensor

CFG = ReconNetConfig(n_views=4, width=8, n_down=3, resolution=16)
CAMS = four_orthogonal_views(1.5, 49, 16, 16)


def _bundle(seed=0, cfg=CFG):
    imgs = np.random.default_rng(seed).uniform(0, 1, (cfg.n_views, 3, cfg.resolution, cfg.resolution))
    return ViewBundle(imgs, CAMS[:cfg.n_views], ["front", "back", "left", "right"][:cfg.n_views])


def test_output_shape_and_taps():
    grid, taps = net_forward(_bundle(), init_params(CFG, 0), CFG)
    assert grid.shape == (4, 14, 16, 16)
    assert set(CFG.tap_names) == {"mid", "up1", "up2", "up3"}
    assert set(CFG.tap_names) <= set(taps)


def test_cross_view_coupling_is_live():
    params = init_params(CFG, 0)
    b = _bundle()
    g0 = net_forward(b, params, CFG)[0].data
    imgs = b.images.copy()
    imgs[1] = 0
    g1 = net_forward(ViewBundle(imgs, b.cameras, b.roles), params, CFG)[0].data
    assert np.abs(g1[0] - g0[0]).max() > 0


def test_role_embeddings_break_view_permutation_symmetry():
    params = init_params(CFG, 0)
    b = _bundle()
    g0 = net_forward(b, params, CFG)[0].data
    swapped = ViewBundle(b.images, b.cameras, ["back", "front", "left", "right"])
    g1 = net_forward(swapped, params, CFG)[0].data
    assert np.abs(g1 - g0).max() > 0


def test_grads_reach_every_parameter():
    params = init_params(CFG, 0)
    for p in params.values():
        p.requires_grad = True
    grid, _ = net_forward(_bundle(), params, CFG)
    T.backward(T.sum_(grid), leaves=list(params.values()))
    dead = [k for k, p in params.items() if not np.abs(p.grad).sum() > 0]
    assert not dead


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_params(CFG, 3), init_params(CFG, 3), init_params(CFG, 4)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_forward_deterministic_taps():
    params = init_params(CFG, 0)
    _, t1 = net_forward(_bundle(), params, CFG)
    _, t2 = net_forward(_bundle(), params, CFG)
    for k in t1:
        np.testing.assert_array_equal(t1[k].data, t2[k].data)


def test_bundle_mismatch_rejected():
    with pytest.raises(T.ShapeError):
        net_forward(_bundle(cfg=ReconNetConfig(n_views=2, width=8, resolution=16)), init_params(CFG, 0), CFG)
    with pytest.raises(ValueError):
        ViewBundle(np.zeros((1, 3, 4, 4)), CAMS[:1], ["sideways"])


def test_zero_grid_gives_mid_depth_half_opacity():
    grid = Tensor(np.zeros((4, 14, 16, 16), np.float32))
    gs = head_to_gaussians(grid, CAMS)
    assert gs.count == 4 * 16 * 16
    np.testing.assert_allclose(gs.opacity, 0.5)
    np.testing.assert_allclose(gs.color, 0.5)
    depth = np.array([c.world_to_camera(x)[2] for c, x in zip(np.repeat(CAMS, 256), gs.xyz)])
    np.testing.assert_allclose(depth, 1.5, atol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(gs.quat, axis=1), 1.0, atol=1e-6)
    gs.validate()


def test_random_grid_gaussians_valid():
    grid = Tensor(np.random.default_rng(0).normal(0, 5, (4, 14, 16, 16)).astype(np.float32))
    head_to_gaussians(grid, CAMS).validate()


def _taps(vals):
    return {k: Tensor(np.array([v], np.float32)) for k, v in vals.items()}


def test_tap_distance_examples():
    a = _taps({"mid": 1.0, "up1": 2.0})
    assert tap_distance(a, a, ["mid", "up1"]).item() == 0.0
    assert tap_distance(_taps({"mid": 4.0}), _taps({"mid": 1.0}), ["mid"]).item() == pytest.approx(3.0)
    b = _taps({"mid": 0.0, "up1": 0.0})
    assert tap_distance(a, b, ["mid", "up1"]).item() >= tap_distance(a, b, ["mid"]).item()


def test_tap_distance_is_detached_from_supervisor_side():
    a = {"mid": Tensor(np.ones(3, np.float32), requires_grad=True)}
    b = {"mid": Tensor(np.zeros(3, np.float32), requires_grad=True)}
    T.backward(tap_distance(a, b, ["mid"]), leaves=[a["mid"], b["mid"]])
    assert np.abs(a["mid"].grad).sum() > 0
    np.testing.assert_array_equal(b["mid"].grad, 0.0)


def test_tap_distance_shape_mismatch():
    with pytest.raises(T.ShapeError):
        tap_distance({"mid": Tensor(np.ones(2))}, {"mid": Tensor(np.ones(3))}, ["mid"])


def test_attention_placement():
    assert ReconNetConfig(resolution=64).attention_blocks() == ["mid", "up1"]
    assert ReconNetConfig(resolution=32, width=8).attention_blocks() == ["mid", "up1", "up2"]


def test_checkpoint_round_trip(tmp_path):
    net = ReconNet(CFG, seed=2)
    net.save(tmp_path / "n.ckpt", extra={"stage": "x"})
    back, header, opt = ReconNet.load(tmp_path / "n.ckpt")
    assert header["stage"] == "x" and opt is None
    assert back.cfg == CFG
    for k in net.params:
        np.testing.assert_array_equal(back.params[k].data, net.params[k].data)
