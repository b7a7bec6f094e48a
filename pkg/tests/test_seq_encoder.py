import pytest
import torch

from conformrec.seq_encoder import MultiHeadSelfAttention, SequenceEncoder


def tiny_encoder(node_count=8, d=4, heads=2, blocks=1, ffn=8, t_max=5, dropout=0.0, seed=0):
    torch.manual_seed(seed)
    return SequenceEncoder(
        node_count=node_count,
        embed_dim=d,
        heads=heads,
        blocks=blocks,
        ffn_hidden=ffn,
        t_max=t_max,
        dropout=dropout,
    ).double()


class TestEmbedInput:
    def test_all_pad_rows_are_positional(self):
        enc = tiny_encoder()
        padded = torch.zeros(1, 5, dtype=torch.long)
        out = enc.embed_input(padded)
        torch.testing.assert_close(out[0], enc.positional_embedding.weight.double())

    def test_zero_positional_gives_item_rows(self):
        enc = tiny_encoder()
        with torch.no_grad():
            enc.positional_embedding.weight.zero_()
        padded = torch.tensor([[3, 1, 4, 0, 0]])
        out = enc.embed_input(padded)
        torch.testing.assert_close(out[0], enc.item_embedding.weight[padded[0]].double())

    def test_out_of_range_item(self):
        enc = tiny_encoder()
        with pytest.raises(IndexError):
            enc.embed_input(torch.tensor([[99, 0, 0, 0, 0]]))

    def test_jacobian_is_identity_indicator(self):
        # finite difference w.r.t. one table entry: the derivative equals the
        # number of positions holding that item (here, exactly one)
        enc = tiny_encoder()
        padded = torch.tensor([[3, 1, 4, 0, 0]])
        eps = 1e-6
        base = enc.embed_input(padded).detach()
        with torch.no_grad():
            enc.item_embedding.weight[3, 2] += eps
        bumped = enc.embed_input(padded).detach()
        fd = (bumped - base) / eps
        expected = torch.zeros_like(fd)
        expected[0, 0, 2] = 1.0
        torch.testing.assert_close(fd, expected, atol=1e-5, rtol=1e-5)


class TestAttention:
    def test_single_valid_key_is_value_projection(self):
        torch.manual_seed(1)
        attn = MultiHeadSelfAttention(embed_dim=4, heads=2, dropout=0.0).double()
        states = torch.randn(1, 3, 4, dtype=torch.float64)
        mask = torch.tensor([[True, False, False]])
        out = attn(states, mask)
        expected = attn.w_out(attn.w_value(states[:, :1]))
        torch.testing.assert_close(out[:, 0], expected[:, 0])

    def test_head_concatenation_dimension(self):
        for heads in (1, 2, 4):
            attn = MultiHeadSelfAttention(embed_dim=8, heads=heads, dropout=0.0)
            states = torch.randn(2, 5, 8)
            mask = torch.ones(2, 5, dtype=torch.bool)
            assert attn(states, mask).shape == (2, 5, 8)

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError):
            MultiHeadSelfAttention(embed_dim=6, heads=4, dropout=0.0)


class TestEncode:
    def test_pad_content_invariance(self):
        enc = tiny_encoder(seed=3)
        items = torch.tensor([[2, 5, 0, 0, 0]])
        lengths = torch.tensor([2])
        out_a = enc(items, lengths).hidden
        corrupted = items.clone()
        corrupted[0, 2:] = torch.tensor([7, 1, 3])
        out_b = enc(corrupted, lengths).hidden
        torch.testing.assert_close(out_a[0, :2], out_b[0, :2])

    def test_pad_invariance_many_random_fills(self):
        enc = tiny_encoder(seed=4)
        torch.manual_seed(9)
        items = torch.tensor([[2, 5, 6, 0, 0]])
        lengths = torch.tensor([3])
        reference = enc(items, lengths).hidden[0, :3]
        for _ in range(5):
            fill = torch.randint(0, 8, (2,))
            corrupted = items.clone()
            corrupted[0, 3:] = fill
            torch.testing.assert_close(enc(corrupted, lengths).hidden[0, :3], reference)

    def test_deterministic_without_dropout(self):
        enc = tiny_encoder(seed=5)
        items = torch.tensor([[2, 5, 6, 1, 0]])
        lengths = torch.tensor([4])
        a = enc(items, lengths).hidden
        b = enc(items, lengths).hidden
        torch.testing.assert_close(a, b)

    def test_mask_marks_prefix(self):
        enc = tiny_encoder()
        out = enc(torch.tensor([[2, 5, 0, 0, 0]]), torch.tensor([2]))
        assert out.mask.tolist() == [[True, True, False, False, False]]

    def test_gradient_matches_finite_differences(self):
        enc = tiny_encoder(seed=6)
        items = torch.tensor([[3, 1, 4, 0, 0], [2, 6, 0, 0, 0]])
        lengths = torch.tensor([3, 2])
        torch.manual_seed(42)
        readout = torch.randn(2, 5, 4, dtype=torch.float64)

        def loss_fn():
            out = enc(items, lengths)
            masked = out.hidden * out.mask.unsqueeze(-1)
            return (masked * readout).sum() + masked.pow(2).sum()

        loss = loss_fn()
        enc.zero_grad()
        loss.backward()
        eps = 1e-6
        for name, param in enc.named_parameters():
            grad = param.grad if param.grad is not None else torch.zeros_like(param)
            flat = param.data.view(-1)
            fd = torch.zeros_like(flat)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                lp = loss_fn().item()
                flat[idx] = orig - eps
                lm = loss_fn().item()
                flat[idx] = orig
                fd[idx] = (lp - lm) / (2 * eps)
            fd = fd.view_as(param)
            scale = max(grad.abs().max().item(), fd.abs().max().item(), 1e-10)
            assert (grad - fd).abs().max().item() / scale < 1e-4, name
