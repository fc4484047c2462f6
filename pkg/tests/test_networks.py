import math

import numpy as np
import pytest
import torch

from selftransfer.mmd import MkMmdConfig, mmd_weight
from selftransfer.networks import (
    DanTrArch,
    DanTrNet,
    SurrogateArch,
    SurrogateNet,
    count_parameters,
    dantr_loss,
    extract_target_surrogate,
    init_params,
    load_checkpoint,
    make_dantr,
    make_surrogate,
    save_checkpoint,
)

DT = torch.float64


def lstm_reference(x_seq, w_ih, w_hh, b_ih, b_hh, hidden):
    """Hand-rolled LSTM recursion (gate order i, f, g, o) used as oracle."""
    sigmoid = lambda v: 1.0 / (1.0 + np.exp(-v))
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    outs = []
    for x in x_seq:
        gates = w_ih @ np.atleast_1d(x) + w_hh @ h + b_ih + b_hh
        i, f, g, o = np.split(gates, 4)
        i, f, o = sigmoid(i), sigmoid(f), sigmoid(o)
        g = np.tanh(g)
        c = f * c + i * g
        h = o * np.tanh(c)
        outs.append(h.copy())
    return np.array(outs)


class TestInit:
    def test_deterministic(self):
        arch = SurrogateArch(n_recurrent_layers=2, n_dense_layers=2, hidden_dim=16)
        a, b = make_surrogate(arch, 7), make_surrogate(arch, 7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        arch = SurrogateArch(n_recurrent_layers=1, n_dense_layers=1, hidden_dim=32)
        a, b = make_surrogate(arch, 0), make_surrogate(arch, 1)
        weights_a = torch.cat([p.flatten() for n, p in a.named_parameters() if "weight" in n])
        weights_b = torch.cat([p.flatten() for n, p in b.named_parameters() if "weight" in n])
        assert (weights_a != weights_b).double().mean() > 0.99

    def test_parameter_count_closed_form(self):
        # torch's LSTM cell carries two bias vectors: 4*(d_in + d_h + 2)*d_h per layer
        h = 128
        net = DanTrNet(DanTrArch(hidden_dim=h))
        shared = sum(p.numel() for p in net.shared.parameters())
        assert shared == 4 * (1 + h + 2) * h + 4 * (h + h + 2) * h
        tailored_lstm = sum(p.numel() for p in net.source_head.lstm_layers.parameters())
        assert tailored_lstm == 2 * 4 * (h + h + 2) * h
        dense = sum(p.numel() for p in net.source_head.dense_layers.parameters())
        assert dense == (h * h + h) + (h * 1 + 1)

    def test_forget_gate_bias_one_other_biases_zero(self):
        net = make_surrogate(SurrogateArch(2, 2, 8), 3)
        for name, p in net.named_parameters():
            if "bias_ih" in name:
                h = p.shape[0] // 4
                assert torch.all(p[h:2 * h] == 1.0)
                assert torch.all(p[:h] == 0.0) and torch.all(p[2 * h:] == 0.0)
            elif "bias" in name:
                assert torch.all(p == 0.0)

    def test_weights_fan_in_scaled(self):
        net = make_surrogate(SurrogateArch(1, 1, 64), 4)
        for name, p in net.named_parameters():
            if "weight" in name:
                bound = 1.0 / math.sqrt(p.shape[-1])
                assert p.abs().max() <= bound


class TestSurrogateForward:
    def test_zero_network_zero_output(self):
        net = SurrogateNet(SurrogateArch(2, 2, 8))
        for p in net.parameters():
            p.data.zero_()
        x = torch.randn(3, 20, 1, dtype=DT)
        assert torch.all(net(x) == 0.0)

    def test_shape_contract(self):
        net = make_surrogate(SurrogateArch(1, 1, 4), 0)
        assert tuple(net(torch.zeros(2, 100, 1, dtype=DT)).shape) == (2, 100, 1)

    def test_single_unit_cell_matches_reference(self):
        net = SurrogateNet(SurrogateArch(n_recurrent_layers=1, n_dense_layers=1, hidden_dim=1))
        lstm = net.lstm_layers[0]
        with torch.no_grad():
            lstm.weight_ih_l0.copy_(torch.tensor([[0.5], [-0.3], [0.8], [0.2]], dtype=DT))
            lstm.weight_hh_l0.copy_(torch.tensor([[0.1], [0.4], [-0.6], [0.7]], dtype=DT))
            lstm.bias_ih_l0.copy_(torch.tensor([0.05, 1.0, -0.1, 0.3], dtype=DT))
            lstm.bias_hh_l0.copy_(torch.zeros(4, dtype=DT))
            net.dense_layers[0].weight.copy_(torch.tensor([[1.0]], dtype=DT))
            net.dense_layers[0].bias.copy_(torch.tensor([0.0], dtype=DT))
        x = np.array([0.3, -0.9, 1.4])
        expected = lstm_reference(
            x,
            np.array([[0.5], [-0.3], [0.8], [0.2]]),
            np.array([[0.1], [0.4], [-0.6], [0.7]]),
            np.array([0.05, 1.0, -0.1, 0.3]),
            np.zeros(4),
            hidden=1,
        )
        got = net(torch.tensor(x, dtype=DT).view(1, 3, 1)).detach().numpy().ravel()
        assert np.abs(got - expected.ravel()).max() < 1e-12

    def test_multilayer_matches_reference(self):
        torch.manual_seed(0)
        net = make_surrogate(SurrogateArch(n_recurrent_layers=2, n_dense_layers=1, hidden_dim=3), 5)
        x = np.random.default_rng(0).normal(size=6)
        layer_in = x
        for lstm in net.lstm_layers:
            layer_in = lstm_reference(
                layer_in,
                lstm.weight_ih_l0.detach().numpy(),
                lstm.weight_hh_l0.detach().numpy(),
                lstm.bias_ih_l0.detach().numpy(),
                lstm.bias_hh_l0.detach().numpy(),
                hidden=3,
            )
        w = net.dense_layers[0].weight.detach().numpy()
        b = net.dense_layers[0].bias.detach().numpy()
        expected = layer_in @ w.T + b
        got = net(torch.tensor(x, dtype=DT).view(1, 6, 1)).detach().numpy()[0]
        assert np.abs(got - expected).max() < 1e-12

    def test_causality(self):
        net = make_surrogate(SurrogateArch(2, 2, 8), 1)
        x = torch.randn(2, 30, 1, dtype=DT)
        x_cut = x.clone()
        x_cut[:, 15:, :] = 0.0
        with torch.no_grad():
            full = net(x)[:, :15]
            cut = net(x_cut)[:, :15]
        assert (full - cut).abs().max() < 1e-12

    def test_nonfinite_reported_with_step(self):
        net = make_surrogate(SurrogateArch(1, 1, 4), 0)
        with torch.no_grad():
            net.dense_layers[0].weight.mul_(torch.inf)
        with pytest.raises(RuntimeError, match="step"):
            net(torch.ones(1, 5, 1, dtype=DT))


class TestDanTrForward:
    def setup_method(self):
        self.arch = DanTrArch(hidden_dim=6)
        self.net = make_dantr(self.arch, 2)
        gen = torch.Generator().manual_seed(0)
        self.x_s = torch.randn(3, 10, 1, generator=gen, dtype=DT)
        self.x_t = torch.randn(4, 10, 1, generator=gen, dtype=DT)

    def test_symmetric_configuration(self):
        # identical tailored heads and identical inputs: y_st == y_t, mmd == 0
        net = self.net
        net.target_head.load_state_dict(net.source_head.state_dict())
        bundle = net(self.x_t, self.x_t)
        assert torch.equal(bundle.y_hat_st, bundle.y_hat_t)
        loss = dantr_loss(
            bundle, torch.zeros_like(bundle.y_hat_s), torch.zeros_like(bundle.y_hat_t),
            1, 10, MkMmdConfig(),
        )
        assert loss.mmd.item() == 0.0

    def test_adaptation_uses_source_head_parameters(self):
        bundle_before = self.net(self.x_s, self.x_t)
        with torch.no_grad():
            for p in self.net.target_head.parameters():
                p.copy_(torch.randn(p.shape, dtype=DT) * 100)
        bundle_after = self.net(self.x_s, self.x_t)
        assert torch.equal(bundle_before.y_hat_st, bundle_after.y_hat_st)
        assert not torch.equal(bundle_before.y_hat_t, bundle_after.y_hat_t)

    def test_branch_parameters_alias(self):
        branches = self.net.branch_parameters()
        for a, b in zip(branches["source"]["shared"], branches["target"]["shared"]):
            assert a is b
        for a, b in zip(branches["adaptation"]["tailored"], branches["source"]["tailored"]):
            assert a is b

    def test_toy_branches_match_reference(self):
        arch = DanTrArch(
            shared_recurrent_layers=1, tailored_recurrent_layers=1,
            tailored_dense_layers=1, hidden_dim=1,
        )
        net = make_dantr(arch, 9)
        x = np.random.default_rng(1).normal(size=5)

        def run_branch(head):
            shared = net.shared[0]
            enc = lstm_reference(
                x,
                shared.weight_ih_l0.detach().numpy(), shared.weight_hh_l0.detach().numpy(),
                shared.bias_ih_l0.detach().numpy(), shared.bias_hh_l0.detach().numpy(), 1,
            )
            lstm = head.lstm_layers[0]
            hid = lstm_reference(
                enc,
                lstm.weight_ih_l0.detach().numpy(), lstm.weight_hh_l0.detach().numpy(),
                lstm.bias_ih_l0.detach().numpy(), lstm.bias_hh_l0.detach().numpy(), 1,
            )
            w = head.dense_layers[0].weight.detach().numpy()
            b = head.dense_layers[0].bias.detach().numpy()
            return hid @ w.T + b

        bundle = net(
            torch.tensor(x, dtype=DT).view(1, 5, 1), torch.tensor(x, dtype=DT).view(1, 5, 1)
        )
        assert np.abs(bundle.y_hat_s.detach().numpy()[0] - run_branch(net.source_head)).max() < 1e-12
        assert np.abs(bundle.y_hat_t.detach().numpy()[0] - run_branch(net.target_head)).max() < 1e-12
        assert np.abs(bundle.y_hat_st.detach().numpy()[0] - run_branch(net.source_head)).max() < 1e-12

    def test_forward_target_matches_extracted_surrogate(self):
        extracted = extract_target_surrogate(self.net)
        with torch.no_grad():
            a = self.net.forward_target(self.x_t)
            b = extracted(self.x_t)
        assert torch.equal(a, b)

    def test_hidden_lists_cover_all_tailored_layers(self):
        bundle = self.net(self.x_s, self.x_t)
        n_layers = self.arch.tailored_recurrent_layers + self.arch.tailored_dense_layers
        assert len(bundle.hidden_target) == n_layers
        assert len(bundle.hidden_adapt) == n_layers
        assert tuple(bundle.hidden_target[0].shape) == (4, 6)
        assert tuple(bundle.hidden_target[-1].shape) == (4, 1)

    def test_mean_over_time_representation(self):
        bundle = self.net(self.x_s, self.x_t, representation="mean-over-time")
        with torch.no_grad():
            enc, _ = self.net.shared[0](self.x_t)
            enc, _ = self.net.shared[1](enc)
            h0, _ = self.net.target_head.lstm_layers[0](enc)
        assert torch.allclose(bundle.hidden_target[0], h0.mean(dim=1))


class TestDanTrLoss:
    def test_perfect_predictions_zero_total(self):
        arch = DanTrArch(hidden_dim=4)
        net = make_dantr(arch, 0)
        net.target_head.load_state_dict(net.source_head.state_dict())
        x = torch.randn(3, 8, 1, dtype=DT)
        bundle = net(x, x)
        loss = dantr_loss(bundle, bundle.y_hat_s.detach(), bundle.y_hat_t.detach(),
                          5, 10, MkMmdConfig())
        assert loss.total.item() == 0.0

    def test_zero_step_lambda_zero(self):
        net = make_dantr(DanTrArch(hidden_dim=4), 1)
        x = torch.randn(2, 8, 1, dtype=DT)
        bundle = net(x, x)
        loss = dantr_loss(bundle, torch.zeros_like(bundle.y_hat_s),
                          torch.zeros_like(bundle.y_hat_t), 0, 10, MkMmdConfig())
        assert loss.lam == 0.0
        assert loss.total.item() == loss.reg.item()

    def test_scalar_mse_by_hand(self):
        from selftransfer.networks import ForwardBundle

        one = torch.ones(1, 1, 1, dtype=DT)
        bundle = ForwardBundle(
            y_hat_s=one, y_hat_t=one * 3.0, y_hat_st=None,
            hidden_adapt=None, hidden_target=[one[:, 0]],
        )
        loss = dantr_loss(bundle, torch.zeros_like(one), one * 3.0, 0, 10, MkMmdConfig())
        assert loss.reg.item() == 1.0

    def test_stop_gradient_contract(self):
        arch = DanTrArch(hidden_dim=5)
        x_s = torch.randn(3, 9, 1, dtype=DT)
        x_t = torch.randn(2, 9, 1, dtype=DT)
        y_s = torch.randn(3, 9, 1, dtype=DT)
        y_t = torch.randn(2, 9, 1, dtype=DT)

        def reg_grads(compute_adaptation):
            net = make_dantr(arch, 3, symmetric_heads=False)
            bundle = net(x_s, x_t, compute_adaptation=compute_adaptation)
            loss = dantr_loss(bundle, y_s, y_t, 0, 10, MkMmdConfig())
            loss.reg.backward()
            return [None if p.grad is None else p.grad.clone() for p in net.parameters()]

        with_adapt = reg_grads(True)
        without = reg_grads(False)
        for a, b in zip(with_adapt, without):
            a = torch.zeros(1) if a is None else a
            b = torch.zeros(1) if b is None else b
            assert torch.equal(a, b)

    def test_mmd_gradient_reaches_both_branches(self):
        net = make_dantr(DanTrArch(hidden_dim=5), 4, symmetric_heads=False)
        x_s = torch.randn(3, 9, 1, dtype=DT)
        x_t = torch.randn(3, 9, 1, dtype=DT)
        bundle = net(x_s, x_t)
        loss = dantr_loss(bundle, bundle.y_hat_s.detach(), bundle.y_hat_t.detach(),
                          5, 10, MkMmdConfig())
        loss.total.backward()
        src_grad = sum(p.grad.abs().sum() for p in net.source_head.parameters() if p.grad is not None)
        tgt_grad = sum(p.grad.abs().sum() for p in net.target_head.parameters() if p.grad is not None)
        assert src_grad > 0 and tgt_grad > 0

    def test_detach_adaptation_mmd_cuts_source_path(self):
        net = make_dantr(DanTrArch(hidden_dim=5), 4, symmetric_heads=False)
        x_s = torch.randn(3, 9, 1, dtype=DT)
        x_t = torch.randn(3, 9, 1, dtype=DT)
        bundle = net(x_s, x_t)
        loss = dantr_loss(bundle, bundle.y_hat_s.detach(), bundle.y_hat_t.detach(),
                          5, 10, MkMmdConfig(), detach_adaptation_mmd=True)
        loss.total.backward()
        src_grad = sum(p.grad.abs().sum() for p in net.source_head.parameters() if p.grad is not None)
        tgt_grad = sum(p.grad.abs().sum() for p in net.target_head.parameters() if p.grad is not None)
        assert src_grad == 0 and tgt_grad > 0

    def test_lambda_trace_formula(self):
        for step, total in [(0, 100), (17, 100), (100, 100)]:
            assert mmd_weight(step, total) == 2.0 / (1.0 + math.exp(-10.0 * step / total)) - 1.0


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        arch = SurrogateArch(1, 1, 4)
        net = make_surrogate(arch, 0)
        save_checkpoint(tmp_path / "c.pt", kind="supervised", surrogate_arch=arch,
                        student=net, meta={"step": 3})
        ckpt = load_checkpoint(tmp_path / "c.pt")
        again = ckpt.make_student()
        for a, b in zip(net.parameters(), again.parameters()):
            assert torch.equal(a, b)
        assert ckpt.meta["step"] == 3
        assert ckpt.make_teacher() is None

    def test_fingerprint_mismatch_refused(self, tmp_path):
        arch = SurrogateArch(1, 1, 4)
        save_checkpoint(tmp_path / "c.pt", kind="supervised", surrogate_arch=arch,
                        student=make_surrogate(arch, 0))
        with pytest.raises(ValueError, match="does not match"):
            load_checkpoint(tmp_path / "c.pt", expected_arch=SurrogateArch(1, 1, 8))

    def test_dantr_checkpoint_restores_net(self, tmp_path):
        arch = DanTrArch(hidden_dim=4)
        net = make_dantr(arch, 1)
        extracted = extract_target_surrogate(net)
        save_checkpoint(tmp_path / "c.pt", kind="dantr", surrogate_arch=extracted.arch,
                        student=extracted, dantr_arch=arch, dantr_net=net)
        ckpt = load_checkpoint(tmp_path / "c.pt")
        x = torch.randn(2, 7, 1, dtype=DT)
        with torch.no_grad():
            assert torch.equal(ckpt.make_dantr().forward_target(x), ckpt.make_student()(x))
