import pytest
import torch

from astetag.model import Ablation, ModelConfig, TaggingModel, apply_ablation

torch.set_num_threads(1)

CONFIG = ModelConfig(vocab_size=9, layers=2, heads=2, width=8, ffn_width=16,
                     relpos_dim=4, conv_blocks=1, max_len=10, dropout=0.0)


def make_model(seed=0, ablation=None):
    torch.manual_seed(seed)
    return TaggingModel(CONFIG, ablation)


class TestAblationValidation:
    def test_surface_must_survive(self):
        with pytest.raises(ValueError):
            Ablation(no_token_branch_1d=True, no_attn_branch_1d=True)
        with pytest.raises(ValueError):
            Ablation(no_token_branch_2d=True, no_attn_branch_2d=True)

    def test_mask_layer_range(self):
        with pytest.raises(ValueError):
            TaggingModel(CONFIG, Ablation(mask_layers=frozenset({5})))

    def test_describe(self):
        assert Ablation().describe() == "full"
        text = Ablation(no_conv=True, mask_layers=frozenset({2, 1})).describe()
        assert "no-conv" in text and "mask-layers=1,2" in text


class TestForward:
    def test_shapes(self):
        model = make_model().eval()
        fused = model(torch.tensor([1, 2, 3, 4, 5]))
        assert fused.logits1d.shape == (5, 3)
        assert fused.logits2d.shape == (5, 5, 4)

    def test_disabled_attention_branches_leave_token_branches(self):
        model = make_model().eval()
        view = apply_ablation(
            model, Ablation(no_attn_branch_1d=True, no_attn_branch_2d=True)
        ).eval()
        ids = torch.tensor([1, 2, 3])
        fused = view(ids)
        encoded = model.encoder.encode(ids)
        with torch.no_grad():
            assert torch.allclose(
                fused.logits1d, model.heads.tag1d_from_tokens(encoded.hidden)
            )
            assert torch.allclose(
                fused.logits2d, model.heads.tag2d_from_tokens(encoded.hidden)
            )

    def test_fusion_is_sum_of_enabled_branches(self):
        model = make_model().eval()
        ids = torch.tensor([1, 2, 3, 4])
        full = model(ids)
        token_only = apply_ablation(
            model, Ablation(no_attn_branch_1d=True, no_attn_branch_2d=True)
        ).eval()(ids)
        attn_only = apply_ablation(
            model, Ablation(no_token_branch_1d=True, no_token_branch_2d=True)
        ).eval()(ids)
        assert torch.allclose(
            full.logits1d, token_only.logits1d + attn_only.logits1d, atol=1e-6
        )
        assert torch.allclose(
            full.logits2d, token_only.logits2d + attn_only.logits2d, atol=1e-6
        )

    def test_identity_view(self):
        model = make_model().eval()
        view = apply_ablation(model, Ablation()).eval()
        ids = torch.tensor([1, 2, 3])
        a, b = model(ids), view(ids)
        assert torch.equal(a.logits1d, b.logits1d)
        assert torch.equal(a.logits2d, b.logits2d)

    def test_view_shares_weights(self):
        model = make_model()
        view = apply_ablation(model, Ablation(no_conv=True))
        assert view.encoder is model.encoder
        assert view.heads.token_to_1d.weight is model.heads.token_to_1d.weight

    def test_mask_layers_changes_attention_features_only(self):
        model = make_model().eval()
        masked = apply_ablation(model, Ablation(mask_layers=frozenset({1}))).eval()
        ids = torch.tensor([1, 2, 3])
        encoded = model.encoder.encode(ids, mask_layers=frozenset({1}))
        assert torch.equal(encoded.attention[:2], torch.zeros(2, 3, 3))
        # hidden states are untouched by masking
        plain = model.encoder.encode(ids)
        assert torch.equal(encoded.hidden, plain.hidden)
        fused_masked = masked(ids)
        fused_plain = model(ids)
        assert not torch.allclose(fused_masked.logits2d, fused_plain.logits2d)


class TestTrainableParameters:
    def count(self, ablation):
        model = make_model(ablation=ablation)
        return sum(p.numel() for p in model.trainable_parameters())

    def test_full_model_trains_everything(self):
        model = make_model()
        assert self.count(Ablation()) == sum(p.numel() for p in model.parameters())

    def test_attention_free_model_excludes_refiner_and_attn_heads(self):
        model = make_model()
        excluded = (
            sum(p.numel() for p in model.refiner.parameters())
            + sum(p.numel() for p in model.heads.attention_to_1d.parameters())
            + sum(p.numel() for p in model.heads.attention_to_2d.parameters())
        )
        got = self.count(Ablation(no_attn_branch_1d=True, no_attn_branch_2d=True))
        assert got == sum(p.numel() for p in model.parameters()) - excluded

    def test_no_relpos_excludes_table(self):
        model = make_model()
        got = self.count(Ablation(no_relpos=True))
        want = sum(p.numel() for p in model.parameters()) - model.refiner.relpos_table.numel()
        assert got == want

    def test_no_conv_excludes_blocks(self):
        model = make_model()
        got = self.count(Ablation(no_conv=True))
        want = sum(p.numel() for p in model.parameters()) - sum(
            p.numel() for p in model.refiner.blocks.parameters()
        )
        assert got == want
