import numpy as np
import pytest
import torch

from u2ad.scorenet import DualPathwayScoreNet, ScoreNetConfig, cosine_similarity_matrix

CFG = ScoreNetConfig(K=2, d_model=32, n_heads=4, N=8, d_in=2)


@pytest.fixture
def net():
    torch.manual_seed(0)
    return DualPathwayScoreNet(CFG)


class TestCosineSimilarity:
    def test_identical_rows(self):
        x = torch.ones(4, 3)
        assert torch.allclose(cosine_similarity_matrix(x), torch.ones(4, 4))

    def test_orthogonal(self):
        x = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        m = cosine_similarity_matrix(x)
        assert m[0, 1] == pytest.approx(0.0, abs=1e-7)

    def test_hand_value(self):
        x = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
        m = cosine_similarity_matrix(x)
        assert m[0, 1] == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-6)

    def test_symmetric_unit_diag(self):
        x = torch.randn(6, 5, generator=torch.Generator().manual_seed(1))
        m = cosine_similarity_matrix(x)
        assert torch.allclose(m, m.T, atol=1e-6)
        assert torch.allclose(torch.diagonal(m), torch.ones(6), atol=1e-5)

    def test_zero_row_guarded(self):
        x = torch.zeros(3, 4)
        m = cosine_similarity_matrix(x)
        assert torch.isfinite(m).all()


class TestTimeEmbedding:
    def test_deterministic(self, net):
        a, b = net.embed_time(0.37), net.embed_time(0.37)
        assert torch.equal(a, b)

    def test_distinct_times_distinct_embeddings(self, net):
        a, b = net.embed_time(0.2), net.embed_time(0.7)
        assert (a - b).abs().max() > 0

    def test_output_length(self, net):
        assert net.embed_time(0.5).shape == (CFG.d_model,)
        assert net.embed_time(torch.tensor([0.1, 0.9])).shape == (2, CFG.d_model)


class TestForward:
    def test_shapes(self, net):
        out = net(torch.randn(3, 8, 2), torch.tensor([0.1, 0.5, 0.9]))
        assert out.score.shape == (3, 8, 2)
        assert len(out.chars.psi) == CFG.K
        assert all(p.shape == (3, 8, 8) for p in out.chars.psi)
        assert all(p.shape == (3, 8, 8) for p in out.chars.xi)

    def test_row_stochastic(self, net):
        out = net(torch.randn(4, 8, 2), 0.3)
        for mats in (out.chars.psi, out.chars.xi):
            for m in mats:
                assert (m >= 0).all()
                assert torch.allclose(m.sum(-1), torch.ones(4, 8), atol=1e-5)

    def test_zero_score_at_init(self, net):
        out = net(torch.randn(2, 8, 2), 0.5)
        assert out.score.abs().max() == 0.0

    def test_shape_mismatch(self, net):
        with pytest.raises(ValueError):
            net(torch.randn(2, 9, 2), 0.5)
        with pytest.raises(ValueError):
            net(torch.randn(2, 8, 3), 0.5)

    def test_batch_time_mismatch(self, net):
        with pytest.raises(ValueError):
            net(torch.randn(3, 8, 2), torch.tensor([0.1, 0.2]))

    def test_single_window(self, net):
        out = net(torch.randn(8, 2), 0.4)
        assert out.score.shape == (8, 2)
        assert out.chars.psi[0].shape == (8, 8)

    def test_channel_equivariance_at_init(self):
        # permuting input channels along with the input-projection columns and
        # the head rows permutes the score channels identically
        torch.manual_seed(3)
        net = DualPathwayScoreNet(CFG)
        with torch.no_grad():
            net.head.weight.normal_(0, 0.05)
            net.head.bias.normal_(0, 0.05)
        perm = torch.tensor([1, 0])
        permuted = DualPathwayScoreNet(CFG)
        permuted.load_state_dict(net.state_dict())
        with torch.no_grad():
            permuted.in_proj.weight.copy_(net.in_proj.weight[:, perm])
            permuted.head.weight.copy_(net.head.weight[perm, :])
            permuted.head.bias.copy_(net.head.bias[perm])
        x = torch.randn(2, 8, 2, generator=torch.Generator().manual_seed(9))
        out = net(x, 0.3).score
        out_p = permuted(x[..., perm], 0.3).score
        assert torch.allclose(out_p, out[..., perm], atol=1e-6)

    def test_gradient_check_double(self):
        # finite differences vs backprop on a scalar loss, double precision
        torch.manual_seed(5)
        net = DualPathwayScoreNet(ScoreNetConfig(K=1, d_model=16, n_heads=2, N=4, d_in=2)).double()
        with torch.no_grad():
            net.head.weight.normal_(0, 0.1)
        x = torch.randn(2, 4, 2, dtype=torch.float64)

        def loss_value():
            return (net(x, 0.5).score ** 2).sum()

        loss = loss_value()
        loss.backward()
        param = net.layers[0].global_branch.q_proj.weight
        idx = (1, 3)
        g_bp = param.grad[idx].item()
        h = 1e-6
        with torch.no_grad():
            param[idx] += h
            up = loss_value().item()
            param[idx] -= 2 * h
            down = loss_value().item()
            param[idx] += h
        g_fd = (up - down) / (2 * h)
        assert g_bp == pytest.approx(g_fd, rel=1e-3, abs=1e-9)


class TestConfig:
    def test_heads_divide_dmodel(self):
        with pytest.raises(ValueError):
            ScoreNetConfig(K=1, d_model=30, n_heads=4, N=8, d_in=1)

    def test_needs_layers(self):
        with pytest.raises(ValueError):
            ScoreNetConfig(K=0, d_model=32, n_heads=4, N=8, d_in=1)

    def test_default_ffn_width(self):
        cfg = ScoreNetConfig(K=1, d_model=32, n_heads=4, N=8, d_in=1)
        assert cfg.d_ff == 128
