import math

import numpy as np
import pytest
import torch

from helpers import fd_gradient_check

from astetag.heads import FusedLogits, TaggingHeads, fuse, rotate_pairs

torch.set_num_threads(1)


def make_heads(seed=0, width=8, attention_channels=6):
    torch.manual_seed(seed)
    return TaggingHeads(width, attention_channels)


def zero_heads(**kwargs):
    heads = make_heads(**kwargs)
    with torch.no_grad():
        for p in heads.parameters():
            p.zero_()
    return heads


class TestTokenTo1D:
    def test_zero_parameters(self):
        heads = zero_heads()
        out = heads.tag1d_from_tokens(torch.randn(4, 8))
        assert torch.equal(out, torch.zeros(4, 3))

    def test_identical_rows_identical_logits(self):
        heads = make_heads()
        row = torch.randn(8)
        out = heads.tag1d_from_tokens(torch.stack([row, row, row]))
        assert torch.equal(out[0], out[1])
        assert torch.equal(out[1], out[2])

    def test_against_manual_matmul(self):
        heads = make_heads()
        hidden = torch.randn(2, 8)
        out = heads.tag1d_from_tokens(hidden)
        w = heads.token_to_1d.weight.detach().numpy()
        b = heads.token_to_1d.bias.detach().numpy()
        h = hidden.numpy()
        expected = np.array(
            [[sum(h[i, k] * w[c, k] for k in range(8)) + b[c]
              for c in range(3)] for i in range(2)]
        )
        assert np.allclose(out.detach().numpy(), expected, atol=1e-6)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            make_heads().tag1d_from_tokens(torch.randn(4, 5))

    def test_locality(self):
        heads = make_heads()
        hidden = torch.randn(5, 8)
        base = heads.tag1d_from_tokens(hidden)
        bumped = hidden.clone()
        bumped[2] += 1.0
        out = heads.tag1d_from_tokens(bumped)
        assert not torch.equal(out[2], base[2])
        mask = torch.ones(5, dtype=torch.bool)
        mask[2] = False
        assert torch.equal(out[mask], base[mask])


class TestAttentionTo1D:
    def test_depends_only_on_diagonal(self):
        heads = make_heads()
        attention = torch.randn(6, 4, 4)
        base = heads.tag1d_from_attention(attention)
        noisy = attention + torch.randn(6, 4, 4) * (1 - torch.eye(4))
        assert torch.equal(heads.tag1d_from_attention(noisy), base)

    def test_zero_parameters(self):
        heads = zero_heads()
        out = heads.tag1d_from_attention(torch.randn(6, 4, 4))
        assert torch.equal(out, torch.zeros(4, 3))

    def test_against_loop_oracle(self):
        heads = make_heads()
        attention = torch.randn(6, 3, 3)
        out = heads.tag1d_from_attention(attention)
        w = heads.attention_to_1d.weight.detach().numpy()
        b = heads.attention_to_1d.bias.detach().numpy()
        a = attention.numpy()
        expected = np.array(
            [[sum(a[c, i, i] * w[cls, c] for c in range(6)) + b[cls]
              for cls in range(3)] for i in range(3)]
        )
        assert np.allclose(out.detach().numpy(), expected, atol=1e-6)


class TestTokenTo2D:
    def test_shift_invariance_with_duplicated_content(self):
        heads = make_heads()
        chunk = torch.randn(2, 8)
        hidden = torch.cat([chunk, torch.randn(1, 8), chunk])  # rows 3,4 = rows 0,1
        scores = heads.tag2d_from_tokens(hidden)
        assert torch.allclose(scores[3, 4], scores[0, 1], atol=1e-5)
        assert torch.allclose(scores[4, 3], scores[1, 0], atol=1e-5)

    def test_diagonal_is_plain_dot_product(self):
        heads = make_heads()
        hidden = torch.randn(4, 8)
        scores = heads.tag2d_from_tokens(hidden).detach()
        with torch.no_grad():
            for t in range(4):
                q = hidden @ heads.query_weight[t] + heads.query_bias[t]
                k = hidden @ heads.key_weight[t] + heads.key_bias[t]
                for i in range(4):
                    assert scores[i, i, t].item() == pytest.approx(
                        float(q[i] @ k[i]), rel=1e-5, abs=1e-5
                    )

    def test_against_rotation_matrix_oracle(self):
        heads = make_heads(width=4)
        hidden = torch.randn(2, 4)
        scores = heads.tag2d_from_tokens(hidden).detach().numpy()
        inv_freq = heads.inv_freq.numpy()

        def rotation(position):
            blocks = []
            for freq in inv_freq:
                theta = position * freq
                blocks.append(np.array(
                    [[math.cos(theta), -math.sin(theta)],
                     [math.sin(theta), math.cos(theta)]]
                ))
            out = np.zeros((4, 4))
            out[0:2, 0:2] = blocks[0]
            out[2:4, 2:4] = blocks[1]
            return out

        for t in range(4):
            q = (hidden @ heads.query_weight[t] + heads.query_bias[t]).detach().numpy()
            k = (hidden @ heads.key_weight[t] + heads.key_bias[t]).detach().numpy()
            for i in range(2):
                for j in range(2):
                    expected = (rotation(i) @ q[i]) @ (rotation(j) @ k[j])
                    assert scores[i, j, t] == pytest.approx(expected, abs=1e-5)

    def test_no_rotary_is_position_free(self):
        heads = make_heads()
        row = torch.randn(8)
        hidden = torch.stack([row, row, row])
        scores = heads.tag2d_from_tokens(hidden, use_rotary=False)
        assert torch.allclose(scores[0, 2], scores[1, 2], atol=1e-6)
        assert torch.allclose(scores[0, 1], scores[2, 1], atol=1e-6)

    def test_odd_width_rejected_at_construction(self):
        with pytest.raises(ValueError):
            TaggingHeads(7, 6)


class TestRotatePairs:
    def test_preserves_norm(self):
        torch.manual_seed(0)
        x = torch.randn(4, 5, 8)
        inv_freq = 10000.0 ** (-torch.arange(0, 8, 2, dtype=torch.float32) / 8)
        rotated = rotate_pairs(x, torch.arange(5), inv_freq)
        assert torch.allclose(rotated.norm(dim=-1), x.norm(dim=-1), atol=1e-5)

    def test_position_zero_is_identity(self):
        x = torch.randn(3, 1, 8)
        inv_freq = 10000.0 ** (-torch.arange(0, 8, 2, dtype=torch.float32) / 8)
        rotated = rotate_pairs(x, torch.zeros(1, dtype=torch.long), inv_freq)
        assert torch.allclose(rotated, x, atol=1e-7)


class TestAttentionTo2D:
    def test_zero_parameters(self):
        heads = zero_heads()
        out = heads.tag2d_from_attention(torch.randn(6, 3, 3))
        assert torch.equal(out, torch.zeros(3, 3, 4))

    def test_channel_constant_input(self):
        heads = make_heads()
        attention = torch.arange(6, dtype=torch.float32)[:, None, None].repeat(1, 3, 3)
        out = heads.tag2d_from_attention(attention)
        for i in range(3):
            for j in range(3):
                assert torch.allclose(out[i, j], out[0, 0], atol=1e-6)

    def test_against_loop_oracle(self):
        heads = make_heads()
        attention = torch.randn(6, 2, 2)
        out = heads.tag2d_from_attention(attention)
        w = heads.attention_to_2d.weight.detach().numpy()
        b = heads.attention_to_2d.bias.detach().numpy()
        a = attention.numpy()
        for i in range(2):
            for j in range(2):
                for cls in range(4):
                    expected = sum(a[c, i, j] * w[cls, c] for c in range(6)) + b[cls]
                    assert out[i, j, cls].item() == pytest.approx(expected, abs=1e-5)

    def test_locality(self):
        heads = make_heads()
        attention = torch.randn(6, 4, 4)
        base = heads.tag2d_from_attention(attention)
        bumped = attention.clone()
        bumped[:, 1, 3] += 1.0
        out = heads.tag2d_from_attention(bumped)
        assert not torch.equal(out[1, 3], base[1, 3])
        changed = (out != base).any(dim=-1)
        assert changed.sum() == 1 and changed[1, 3]


class TestFuse:
    def test_sum_of_two_branches(self):
        a = torch.randn(4, 3)
        b = torch.randn(4, 3)
        c = torch.randn(4, 4, 4)
        d = torch.randn(4, 4, 4)
        fused = fuse([a, b], [c, d])
        assert torch.allclose(fused.logits1d, a + b)
        assert torch.allclose(fused.logits2d, c + d)

    def test_zeroed_branch_is_identity(self):
        a = torch.randn(4, 3)
        c = torch.randn(4, 4, 4)
        fused = fuse([a, torch.zeros_like(a)], [c, torch.zeros_like(c)])
        assert torch.equal(fused.logits1d, a)
        assert torch.equal(fused.logits2d, c)

    def test_single_branch_per_surface(self):
        a = torch.randn(4, 3)
        c = torch.randn(4, 4, 4)
        fused = fuse([a], [c])
        assert torch.equal(fused.logits1d, a)

    def test_additivity(self):
        a, b = torch.randn(3, 3), torch.randn(3, 3)
        c, d = torch.randn(3, 3, 4), torch.randn(3, 3, 4)
        both = fuse([a, b], [c, d])
        left = fuse([a, torch.zeros_like(b)], [c, torch.zeros_like(d)])
        right = fuse([torch.zeros_like(a), b], [torch.zeros_like(c), d])
        assert torch.allclose(both.logits1d, left.logits1d + right.logits1d)
        assert torch.allclose(both.logits2d, left.logits2d + right.logits2d)

    def test_empty_surface_rejected(self):
        with pytest.raises(ValueError):
            fuse([], [torch.randn(3, 3, 4)])
        with pytest.raises(ValueError):
            fuse([torch.randn(3, 3)], [])

    def test_shape_disagreement_rejected(self):
        with pytest.raises(ValueError):
            fuse([torch.randn(3, 3), torch.randn(4, 3)], [torch.randn(3, 3, 4)])

    def test_as_numpy(self):
        fused = FusedLogits(torch.randn(2, 3), torch.randn(2, 2, 4))
        l1, l2 = fused.as_numpy()
        assert l1.shape == (2, 3) and l2.shape == (2, 2, 4)


@pytest.mark.parametrize("branch", ["token_1d", "attn_1d", "token_2d", "attn_2d"])
def test_branch_gradients_match_finite_differences(branch):
    torch.manual_seed(2)
    heads = make_heads(width=6, attention_channels=4).double()
    hidden = torch.randn(3, 6, dtype=torch.float64)
    attention = torch.randn(4, 3, 3, dtype=torch.float64)
    probes = {
        "token_1d": (torch.randn(3, 3, dtype=torch.float64),
                     lambda: heads.tag1d_from_tokens(hidden),
                     list(heads.token_to_1d.parameters())),
        "attn_1d": (torch.randn(3, 3, dtype=torch.float64),
                    lambda: heads.tag1d_from_attention(attention),
                    list(heads.attention_to_1d.parameters())),
        "token_2d": (torch.randn(3, 3, 4, dtype=torch.float64),
                     lambda: heads.tag2d_from_tokens(hidden),
                     [heads.query_weight, heads.query_bias,
                      heads.key_weight, heads.key_bias]),
        "attn_2d": (torch.randn(3, 3, 4, dtype=torch.float64),
                    lambda: heads.tag2d_from_attention(attention),
                    list(heads.attention_to_2d.parameters())),
    }
    probe, forward, params = probes[branch]
    worst = fd_gradient_check(lambda: (forward() * probe).sum(), params, n_coords=50)
    assert worst <= 1e-6
