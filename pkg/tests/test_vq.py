import pytest
import torch
from hypothesis import given, settings, strategies as st

from recon3d.config import LadConfig, desk
from recon3d.lad import VQAutoencoder, quantize, revive_codes, voxel_iou

SMALL = LadConfig(resolution=16, latent_grid=4, codebook_size=32, codebook_dim=8, vq_channels=4)


def test_exact_match_selects_entry():
    cb = torch.randn(16, 8)
    q = quantize(cb[7].clone().unsqueeze(0), cb)
    assert q.index.item() == 7 and q.error.item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_quantize_matches_brute_force_and_is_idempotent(seed):
    g = torch.Generator().manual_seed(seed)
    cb = torch.randn(20, 5, generator=g, dtype=torch.float64)
    v = torch.randn(30, 5, generator=g, dtype=torch.float64)
    q = quantize(v, cb)
    brute = torch.stack([((cb - x) ** 2).sum(1).argmin() for x in v])
    assert torch.equal(q.index, brute)
    assert torch.equal(quantize(q.vector.detach(), cb).index, q.index)
    assert torch.allclose(q.error, ((v - cb[q.index]) ** 2).sum(1))


def test_straight_through_gradient():
    cb = torch.randn(10, 4)
    v = torch.randn(6, 4, requires_grad=True)
    w = torch.randn(6, 4)
    (quantize(v, cb).vector * w).sum().backward()
    assert torch.equal(v.grad, w)


def test_quantize_rejects_nan():
    with pytest.raises(ValueError):
        quantize(torch.tensor([[float("nan"), 0.0]]), torch.zeros(2, 2))


def test_losses_and_decoding():
    m = VQAutoencoder(SMALL)
    occ = (torch.rand(3, 16, 16, 16) > 0.7).float()
    out = m(occ)
    for k in ("recon", "codebook", "commitment"):
        assert out[k].item() >= 0
    total = out["recon"] + out["codebook"] + 0.25 * out["commitment"]
    assert out["loss"].item() == pytest.approx(total.item(), rel=1e-6)
    codes = m.encode(occ)
    assert codes.shape == (3, 64)
    dec = m.decode(codes)
    assert dec.shape == (3, 16, 16, 16) and set(dec.unique().tolist()) <= {0, 1}
    with pytest.raises(ValueError):
        m.decode(codes[:, :10])
    with pytest.raises(ValueError):
        m(torch.zeros(1, 8, 8, 8))


def test_desk_code_count():
    cfg = desk().lad
    assert cfg.latent_grid ** 3 == cfg.n_codes == 512


def test_bad_grid_ratio():
    with pytest.raises(ValueError):
        VQAutoencoder(LadConfig(resolution=16, latent_grid=16))


def test_iou_and_revive():
    a = torch.zeros(2, 4, 4, 4, dtype=torch.bool)
    assert voxel_iou(a, a).tolist() == [1.0, 1.0]
    b = a.clone()
    b[0, 0, 0, :2] = True
    a[0, 0, 0, 0] = True
    assert voxel_iou(a, b)[0].item() == pytest.approx(0.5)
    m = VQAutoencoder(SMALL)
    used = torch.zeros(32, dtype=torch.bool)
    used[:30] = True
    lat = torch.randn(5, 64, 8)
    before = m.codebook.detach().clone()
    assert revive_codes(m, lat, used, torch.Generator().manual_seed(0)) == 2
    assert torch.equal(m.codebook[:30], before[:30])
    flat = lat.reshape(-1, 8)
    for row in m.codebook[30:]:
        assert (flat == row).all(1).any()
