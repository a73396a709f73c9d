import pytest
import torch

from pclsr.errors import ConfigError, DimensionError
from pclsr.networks import (
    EmbedNetConfig,
    SRBackboneConfig,
    build_embed,
    build_sr,
    count_parameters,
)


def conv_params(cin, cout, k):
    return cin * cout * k * k + cout


def sr_param_tally(blocks, c, scale):
    up = 2 * conv_params(c, 4 * c, 3) if scale in (2, 4) else conv_params(c, 9 * c, 3)
    if scale == 2:
        up //= 2
    return conv_params(3, c, 3) + blocks * 2 * conv_params(c, c, 3) + up + conv_params(c, 3, 3)


def test_sr_output_shape():
    net = build_sr(SRBackboneConfig(), seed=0)
    with torch.no_grad():
        out = net(torch.rand(16, 3, 48, 48))
    assert out.shape == (16, 3, 192, 192)


@pytest.mark.parametrize("scale", [2, 3])
def test_other_scales(scale):
    net = build_sr(SRBackboneConfig(n_resblocks=1, n_channels=8, scale=scale), seed=0)
    with torch.no_grad():
        assert net(torch.rand(1, 3, 5, 7)).shape == (1, 3, 5 * scale, 7 * scale)


def test_sr_rejects_non_rgb():
    with pytest.raises(DimensionError):
        build_sr(SRBackboneConfig(), seed=0)(torch.rand(1, 1, 8, 8))


def test_backbone_config_validation():
    for bad in (dict(scale=5), dict(n_channels=4), dict(n_resblocks=0)):
        with pytest.raises(ConfigError):
            SRBackboneConfig(**bad)


def test_zero_tail_gives_zero_output():
    net = build_sr(SRBackboneConfig(), seed=3)
    with torch.no_grad():
        net.tail.weight.zero_()
        out = net(torch.rand(2, 3, 8, 8))
    assert torch.count_nonzero(out) == 0


def test_desk_parameter_count_matches_tally():
    # head 896 + 4 blocks x 18,496 + upsampler 73,984 + tail 867
    assert sr_param_tally(4, 32, 4) == 149_731
    assert count_parameters(build_sr(SRBackboneConfig(), seed=0)) == 149_731
    for blocks, c, s in [(16, 64, 4), (2, 16, 2), (1, 8, 3)]:
        assert count_parameters(build_sr(SRBackboneConfig(blocks, c, s), seed=0)) == sr_param_tally(blocks, c, s)


def test_embed_parameter_count_matches_tally():
    cfg = EmbedNetConfig()
    chans = [9, 64, 128, 256, 512, 512]
    tally = sum(conv_params(a, b, 4) for a, b in zip(chans[:-1], chans[1:])) + 512 + 1
    assert tally == 6_958_017
    assert count_parameters(build_embed(cfg, seed=0)) == tally


def test_same_seed_same_parameters():
    a, b = build_sr(SRBackboneConfig(), seed=11), build_sr(SRBackboneConfig(), seed=11)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = build_sr(SRBackboneConfig(), seed=12)
    assert max(float((p - q).detach().abs().max()) for p, q in zip(a.parameters(), c.parameters())) > 0


def test_embed_seed_reproducible_with_spectral_norm():
    cfg = EmbedNetConfig(base_channels=8, spectral_norm=True)
    x = torch.rand(2, 9, 32, 32)
    a, b = build_embed(cfg, seed=5), build_embed(cfg, seed=5)
    with torch.no_grad():
        assert torch.equal(a(x)[1], b(x)[1])


def test_biases_zero_and_weights_bounded():
    net = build_sr(SRBackboneConfig(), seed=0)
    w = net.head.weight
    bound = 1 / (w[0].numel() ** 0.5)
    assert float(w.abs().max()) <= bound
    assert torch.count_nonzero(net.head.bias) == 0


def test_pyramid_sizes():
    net = build_embed(EmbedNetConfig(base_channels=8), seed=0)
    with torch.no_grad():
        pyramid, scores = net(torch.rand(2, 9, 96, 96))
    assert len(pyramid) == 4
    assert [f.shape[-1] for f in pyramid] == [48, 24, 12, 6]
    assert [f.shape[1] for f in pyramid] == [8, 16, 32, 64]
    assert scores.shape == (2,)


def test_features_match_forward_taps():
    net = build_embed(EmbedNetConfig(base_channels=8), seed=0)
    x = torch.rand(2, 9, 64, 64)
    with torch.no_grad():
        for a, b in zip(net(x, taps=3)[0], net.features(x, taps=3)):
            assert torch.equal(a, b)


def test_embed_errors():
    net = build_embed(EmbedNetConfig(base_channels=8), seed=0)
    with pytest.raises(DimensionError):
        net(torch.rand(1, 3, 32, 32))
    with pytest.raises(ConfigError):
        net(torch.rand(1, 9, 32, 32), taps=6)


def test_forward_is_deterministic():
    sr = build_sr(SRBackboneConfig(), seed=0)
    embed = build_embed(EmbedNetConfig(base_channels=8), seed=0)
    x = torch.rand(2, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(sr(x), sr(x.clone()))
        h = torch.rand(2, 9, 32, 32)
        (p1, s1), (p2, s2) = embed(h), embed(h.clone())
    assert torch.equal(s1, s2) and all(torch.equal(a, b) for a, b in zip(p1, p2))


def test_batch_duplication_invariance():
    net = build_sr(SRBackboneConfig(), seed=0).double()
    x = torch.rand(1, 3, 12, 12, dtype=torch.float64)
    with torch.no_grad():
        single = net(x)
        double = net(torch.cat([x, x]))
    assert torch.equal(double[:1], single)


def test_translation_consistency():
    net = build_sr(SRBackboneConfig(), seed=0).double()
    x = torch.rand(1, 3, 40, 40, dtype=torch.float64)
    with torch.no_grad():
        y = net(x)
        ys = net(torch.roll(x, shifts=1, dims=-1))
    m = 4 * 14  # well outside the receptive field of the border
    assert float((ys[..., m:-m, m + 4 : -m + 4] - y[..., m:-m, m:-m]).abs().max()) <= 1e-5


def test_parameters_are_disjoint():
    sr = build_sr(SRBackboneConfig(), seed=0)
    embed = build_embed(EmbedNetConfig(base_channels=8), seed=0)
    ids = {id(p) for p in sr.parameters()}
    assert not ids & {id(p) for p in embed.parameters()}
