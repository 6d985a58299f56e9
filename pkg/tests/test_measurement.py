import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onebit_irs.bsbl import block_ground_truth
from onebit_irs.channel_model import build_dictionaries, desk_profile, generate_channels
from onebit_irs.errors import ConfigError
from onebit_irs.measurement import (
    block_permutation, build_pilot_frame, direct_link_operator, extend_with_direct_link, observe,
    structured_slot_columns,
)
from onebit_irs.numerics import RandomSource

from conftest import crandn, scenario, small_config
from oracles import kron_loops, vec

ALPHABET = {1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j}


class TestSlotSchedule:
    @pytest.mark.parametrize("Q, N, expected", [
        (4, 4, [0, 1, 2, 3]),
        (6, 4, [0, 1, 2, 3, 0, 1]),
        (3, 1, [0, 0, 0]),
    ])
    def test_cyclic(self, Q, N, expected):
        np.testing.assert_array_equal(structured_slot_columns(Q, N), expected)


class TestBuildPilotFrame:
    def test_dimensions(self):
        cfg = desk_profile(Q=12)
        frame = build_pilot_frame(cfg, build_dictionaries(cfg), RandomSource(0))
        QM = cfg.Q * cfg.M
        assert frame.xi.shape == (QM, cfg.K * cfg.Gr * cfg.Gt)
        assert frame.upsilon.shape == (QM, cfg.K * cfg.Gr * cfg.N)
        assert frame.phi.shape == (cfg.K * cfg.Gt, cfg.Q)
        assert frame.delta.shape == (cfg.K * cfg.N, cfg.Q)

    def test_unit_modulus(self):
        cfg = desk_profile(Q=12)
        frame = build_pilot_frame(cfg, build_dictionaries(cfg), RandomSource(1))
        np.testing.assert_allclose(np.abs(frame.S), 1.0)
        np.testing.assert_allclose(np.abs(frame.theta), 1.0)

    def test_operators_match_definitions(self):
        cfg = small_config()
        d = build_dictionaries(cfg)
        frame = build_pilot_frame(cfg, d, RandomSource(2))
        for q in range(cfg.Q):
            s = frame.S[q][:, None]
            want_phi = kron_loops(s, d.U_T.conj().T @ frame.theta[:, q:q + 1])[:, 0]
            want_delta = kron_loops(s, frame.theta[:, q:q + 1])[:, 0]
            np.testing.assert_allclose(frame.phi[:, q], want_phi, atol=1e-14)
            np.testing.assert_allclose(frame.delta[:, q], want_delta, atol=1e-14)
        np.testing.assert_allclose(frame.xi, kron_loops(frame.phi.T, d.U_R), atol=1e-14)
        np.testing.assert_allclose(frame.upsilon, kron_loops(d.U_R, frame.delta.T), atol=1e-14)

    def test_structured_full_cycle(self):
        cfg = small_config(Q=2, Gr=4, M=4)
        d = build_dictionaries(cfg)
        frame = build_pilot_frame(cfg, d, RandomSource(3), "structured")
        np.testing.assert_allclose(frame.theta, d.U_T)

    def test_structured_needs_square_transmit_grid(self):
        cfg = desk_profile()
        with pytest.raises(ConfigError):
            build_pilot_frame(cfg, build_dictionaries(cfg), RandomSource(0), "structured")

    def test_unknown_mode(self):
        cfg = small_config()
        with pytest.raises(ConfigError):
            build_pilot_frame(cfg, build_dictionaries(cfg), RandomSource(0), "chaotic")

    def test_deterministic(self):
        cfg = desk_profile(Q=8)
        d = build_dictionaries(cfg)
        a = build_pilot_frame(cfg, d, RandomSource(5))
        b = build_pilot_frame(cfg, d, RandomSource(5))
        np.testing.assert_array_equal(a.xi, b.xi)
        np.testing.assert_array_equal(a.upsilon, b.upsilon)


class TestObserve:
    @pytest.mark.parametrize("K", [1, 2])
    def test_noiseless_smv_identity(self, K):
        cfg = desk_profile(K=K, Q=10)
        _, real, frame, obs = scenario(cfg, seed=K, noise_var=0.0)
        h = np.concatenate([vec(Ht) for Ht in real.H_tilde])
        assert np.linalg.norm(obs.y - frame.xi @ h) / np.linalg.norm(obs.y) < 1e-10

    def test_noiseless_block_identity(self):
        cfg = desk_profile(Q=10)
        dicts, real, frame, obs = scenario(cfg, seed=3, noise_var=0.0)
        h_bar = block_ground_truth(real.H_tilde, dicts)
        assert np.linalg.norm(obs.y_bar - frame.upsilon @ h_bar) / np.linalg.norm(obs.y_bar) < 1e-10

    def test_alphabet_and_quantizer(self):
        _, _, _, obs = scenario(desk_profile(Q=10), seed=4)
        assert set(np.unique(obs.r)).issubset(ALPHABET)
        np.testing.assert_array_equal(obs.r, np.where(obs.y.real > 0, 1.0, -1.0)
                                      + 1j * np.where(obs.y.imag > 0, 1.0, -1.0))

    @given(st.integers(1, 9), st.integers(1, 9))
    def test_permutation(self, M, Q):
        Y = crandn(np.random.default_rng(M * 10 + Q), M, Q)
        perm = block_permutation(M, Q)
        np.testing.assert_array_equal(vec(Y)[perm], vec(Y.T))

    def test_r_bar_is_permuted_r(self):
        cfg = desk_profile(Q=10)
        _, _, _, obs = scenario(cfg, seed=5)
        np.testing.assert_array_equal(obs.r[block_permutation(cfg.M, cfg.Q)], obs.r_bar)

    def test_operators_agree_through_permutation(self):
        cfg = desk_profile(Q=6)
        dicts, real, frame, _ = scenario(cfg, seed=6)
        h = np.concatenate([vec(Ht) for Ht in real.H_tilde])
        h_bar = block_ground_truth(real.H_tilde, dicts)
        perm = block_permutation(cfg.M, cfg.Q)
        np.testing.assert_allclose((frame.xi @ h)[perm], frame.upsilon @ h_bar, atol=1e-10)

    def test_noise_energy(self):
        cfg = small_config(Q=4, snr_db=3.0)
        dicts = build_dictionaries(cfg)
        rng = RandomSource(7)
        real = generate_channels(cfg, rng)
        frame = build_pilot_frame(cfg, dicts, rng)
        clean = observe(real, frame, cfg, rng, noise_var=0.0).y
        energy = [np.sum(np.abs(observe(real, frame, cfg, rng).y - clean) ** 2)
                  for _ in range(10_000)]
        assert np.mean(energy) == pytest.approx(cfg.Q * cfg.M * cfg.noise_var, rel=0.05)


class TestDirectLink:
    def test_dimensions(self):
        cfg = desk_profile(Q=6)
        frame = build_pilot_frame(cfg, build_dictionaries(cfg), RandomSource(0))
        assert direct_link_operator(frame).shape == (cfg.Q * cfg.M, cfg.K * cfg.Gr)
        ext = extend_with_direct_link(frame, cfg)
        assert ext.shape[1] == cfg.K * cfg.Gr * cfg.Gt + cfg.K * cfg.Gr

    def test_zero_direct_channel_no_change(self):
        cfg = desk_profile(Q=6)
        dicts, real, frame, _ = scenario(cfg, seed=1)
        a = observe(real, frame, cfg, RandomSource(9))
        b = observe(real, frame, cfg, RandomSource(9), direct=[np.zeros(cfg.M)] * cfg.K)
        np.testing.assert_array_equal(a.y, b.y)

    def test_noiseless_augmented_identity(self):
        cfg = desk_profile(K=1, Q=8)
        dicts, real, frame, _ = scenario(cfg, seed=2)
        rng = np.random.default_rng(0)
        h_d_ang = crandn(rng, cfg.Gr)
        direct = [dicts.U_R @ h_d_ang]
        obs = observe(real, frame, cfg, RandomSource(3), direct=direct, noise_var=0.0)
        h = np.concatenate([vec(real.H_tilde[0]), h_d_ang])
        np.testing.assert_allclose(extend_with_direct_link(frame, cfg) @ h, obs.y, atol=1e-10)
