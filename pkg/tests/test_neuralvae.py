import numpy as np
import pytest
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from gradcheck import fd_decoder, fd_full_loss, fd_log_q, random_instance, rel_err
from unsupinf.container import read_container, write_container
from unsupinf.datakit import Dataset, generate_clusters, six_cluster_spec
from unsupinf.errors import DataLengthError, FormatError, NumericError, ValidationError
from unsupinf.neuralvae import (
    Checkpoint,
    ParamLayout,
    TrainConfig,
    VAEArch,
    VAEParams,
    batch_gradients,
    checkpoint_filename,
    decode,
    encode,
    grad_log_q,
    grad_pathwise,
    grad_U,
    grad_V_scorefn,
    init_params,
    kl_term,
    load_checkpoint,
    load_run,
    log_likelihood,
    log_q,
    loss,
    sample_losses,
    save_checkpoint,
    train,
)


class TestArchitecture:
    def test_layout_puts_decoder_first(self):
        arch = VAEArch(3, 2, (4,), (5,))
        lay = ParamLayout.from_arch(arch)
        names = [e[0] for e in lay.entries]
        assert names == ["dec0.W", "dec0.b", "dec1.W", "dec1.b", "enc0.W", "enc0.b", "enc1.W", "enc1.b"]
        # decoder 2->5->3, encoder 3->4->4
        assert lay.decoder_size == 5 * 2 + 5 + 3 * 5 + 3
        assert lay.size == lay.decoder_size + 4 * 3 + 4 + 4 * 4 + 4

    def test_dict_round_trip(self):
        arch = VAEArch(3, 2, (4, 4), (8,))
        assert VAEArch.from_dict(arch.to_dict()) == arch

    @pytest.mark.parametrize("kw", [{"input_dim": 0}, {"latent_dim": 0}, {"encoder_hidden": (0,)}, {"activation": "relu"}])
    def test_validation(self, kw):
        args = dict(input_dim=2, latent_dim=1)
        args.update(kw)
        with pytest.raises(ValidationError):
            VAEArch(**args)

    def test_params_are_read_only(self):
        p = init_params(VAEArch(2, 1, (3,), (3,)), 0)
        with pytest.raises(ValueError):
            p.theta[0] = 1.0
        with pytest.raises(ValidationError):
            VAEParams(p.arch, np.zeros(3))

    def test_init_is_seeded_and_bounded(self):
        arch = VAEArch(2, 1, (50,), (50,))
        a, b = init_params(arch, 1), init_params(arch, 1)
        assert a == b and a != init_params(arch, 2)
        W, bias = a.decoder_layers()[0]
        assert np.all(np.abs(W) <= np.sqrt(3.0 / 1)) and np.all(bias == 0)


class TestForward:
    def test_zero_weights_decode_to_zero(self):
        p = VAEParams(VAEArch(3, 2, (4,), (4,)), np.zeros(ParamLayout.from_arch(VAEArch(3, 2, (4,), (4,))).size))
        assert np.array_equal(decode(np.array([1.0, -2.0]), p), np.zeros(3))

    def test_small_weights_are_affine(self):
        arch = VAEArch(2, 2, (3,), (3,))
        r = np.random.default_rng(0)
        p = VAEParams(arch, 1e-4 * r.normal(size=ParamLayout.from_arch(arch).size))
        (W1, b1), (W2, b2) = p.decoder_layers()
        xi = np.array([0.3, -0.7])
        expected = W2 @ (W1 @ xi + b1) + b2
        assert np.allclose(decode(xi, p), expected, rtol=1e-7, atol=0)

    def test_bounded_output_for_huge_codes(self):
        p = init_params(VAEArch(2, 2, (8,), (8,)), 0)
        assert np.all(np.isfinite(decode(np.array([1e6, -1e6]), p)))

    def test_encoder_overflow_raises(self):
        arch = VAEArch(1, 1, (2,), (2,))
        base = init_params(arch, 0)
        theta = base.theta.copy()
        # last encoder bias entry drives the log-variance
        theta[-1] = 5000.0
        with pytest.raises(NumericError):
            encode(np.array([0.0]), base.replace(theta))

    def test_kl_closed_form(self):
        assert kl_term(np.array([1.0]), np.array([1.0])) == pytest.approx(0.5)
        mu, s = 0.7, 0.4
        q, p = norm(mu, s), norm(0, 1)
        numeric = integrate.quad(lambda t: q.pdf(t) * (q.logpdf(t) - p.logpdf(t)), -10, 10)[0]
        assert kl_term(np.array([mu]), np.array([s])) == pytest.approx(numeric, rel=1e-9)

    def test_log_q_matches_scipy(self):
        p = init_params(VAEArch(3, 2, (5,), (5,)), 1)
        x = np.array([0.2, -1.0, 0.5])
        xi = np.array([0.1, 0.4])
        mu, sigma = encode(x, p)
        assert log_q(x, xi, p) == pytest.approx(multivariate_normal(mu, np.diag(sigma**2)).logpdf(xi), rel=1e-13)

    def test_log_likelihood_matches_scipy(self):
        p = init_params(VAEArch(3, 2, (5,), (5,)), 1)
        x, xi = np.array([0.2, -1.0, 0.5]), np.array([0.1, 0.4])
        assert log_likelihood(x, xi, p) == pytest.approx(multivariate_normal(decode(xi, p), np.eye(3)).logpdf(x), rel=1e-13)

    def test_loss_definition(self):
        p = init_params(VAEArch(2, 2, (4,), (4,)), 3)
        x = np.array([0.5, 1.5])
        zeta = np.random.default_rng(0).normal(size=(5, 2))
        mu, sigma = encode(x, p)
        expected = 0.3 * kl_term(mu, sigma) - np.mean(log_likelihood(x, mu + sigma * zeta, p))
        assert loss(x, p, 0.3, zeta) == pytest.approx(expected, rel=1e-14)


class TestGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_decoder_gradient(self, seed):
        params, x, xi, _ = random_instance(seed)
        assert rel_err(grad_U(x, xi, params), fd_decoder(params, x, xi)) < 1e-7

    @pytest.mark.parametrize("seed", range(6))
    def test_pathwise_gradient(self, seed):
        params, x, zeta, beta = random_instance(seed)
        assert rel_err(grad_pathwise(x, zeta, params, beta), fd_full_loss(params, x, zeta, beta)) < 1e-7

    @pytest.mark.parametrize("seed", range(6))
    def test_log_q_gradient(self, seed):
        params, x, xi, _ = random_instance(seed)
        assert rel_err(grad_log_q(x, xi, params), fd_log_q(params, x, xi)) < 1e-7

    def test_score_function_form(self):
        # V = grad log Q * (beta log(Q/P_latent) - log P(x|xi)) for a single draw
        params, x, xi, beta = random_instance(11)
        xi = xi[:1]
        weight = beta * (log_q(x, xi, params)[0] - multivariate_normal(np.zeros(xi.shape[1])).logpdf(xi[0])) - log_likelihood(x, xi, params)[0]
        assert np.allclose(grad_V_scorefn(x, xi, params, beta), weight * grad_log_q(x, xi, params), rtol=1e-11, atol=1e-13)

    def test_batch_equals_single(self):
        params, _, _, beta = random_instance(4)
        r = np.random.default_rng(2)
        X = r.normal(size=(5, params.arch.input_dim))
        zeta = r.normal(size=(5, 3, params.arch.latent_dim))
        for est in ("paper_eq8", "pathwise"):
            u, v, losses = batch_gradients(X, zeta, params, beta, est)
            for i in range(5):
                mu, sigma = encode(X[i], params)
                xi = mu + sigma * zeta[i]
                assert np.allclose(u[i], grad_U(X[i], xi, params), rtol=1e-12, atol=1e-14)
                if est == "pathwise":
                    assert np.allclose(np.r_[u[i], v[i]], grad_pathwise(X[i], zeta[i], params, beta), rtol=1e-12, atol=1e-14)
                else:
                    assert np.allclose(v[i], grad_V_scorefn(X[i], xi, params, beta), rtol=1e-12, atol=1e-14)
                assert losses[i] == pytest.approx(loss(X[i], params, beta, zeta[i]), rel=1e-13)

    def test_shape_errors(self):
        params, x, _, _ = random_instance(0)
        with pytest.raises(ValidationError):
            batch_gradients(x[None], np.zeros((1, 0, params.arch.latent_dim)), params, 1.0)
        with pytest.raises(ValidationError):
            batch_gradients(x[None], np.zeros((2, 1, params.arch.latent_dim)), params, 1.0)
        with pytest.raises(ValidationError):
            batch_gradients(x[None], np.zeros((1, 1, params.arch.latent_dim)), params, 1.0, "reinforce")

    def test_sample_losses_are_seeded(self):
        params, _, _, _ = random_instance(1)
        X = np.ones((3, params.arch.input_dim))
        a = sample_losses(X, params, 1.0, m=4, seed=0)
        assert np.array_equal(a, sample_losses(X, params, 1.0, m=4, seed=0))
        # same input, different per-row streams
        assert len(set(a)) == 3


def _tiny():
    data = generate_clusters(six_cluster_spec(0))
    return data, VAEArch(2, 2, (8,), (8,))


class TestTraining:
    def test_checkpoint_schedule(self):
        data, arch = _tiny()
        cks = train(data, arch, TrainConfig(total_steps=1000, checkpoint_every=300, learning_rate=0.01))
        assert [c.step for c in cks] == [300, 600, 900, 1000]
        cks = train(data, arch, TrainConfig(total_steps=500, checkpoint_every=25, learning_rate=0.01))
        assert len(cks) == 20 and cks[-1].step == 500

    def test_deterministic(self):
        data, arch = _tiny()
        cfg = TrainConfig(total_steps=200, checkpoint_every=100, learning_rate=0.01, seed=3)
        a, b = train(data, arch, cfg), train(data, arch, cfg)
        assert all(x == y for x, y in zip(a, b))
        assert train(data, arch, TrainConfig(total_steps=200, checkpoint_every=100, learning_rate=0.01, seed=4))[-1] != a[-1]

    def test_zero_learning_rate_keeps_init(self):
        data, arch = _tiny()
        cks = train(data, arch, TrainConfig(total_steps=10, checkpoint_every=10, learning_rate=0.0, seed=1))
        assert cks[-1].params == init_params(arch, 1)

    def test_loss_decreases(self):
        data, arch = _tiny()
        log = []
        train(data, arch, TrainConfig(beta=0.5, total_steps=1500, checkpoint_every=1500, learning_rate=0.02), loss_log=log)
        assert np.mean(log[-100:]) < 0.6 * np.mean(log[:20])

    def test_noise_follows_sample_ids(self):
        # full batch: permuting rows together with their ids gives the same run up to summation order
        data, arch = _tiny()
        perm = np.random.default_rng(0).permutation(data.n)
        cfg = TrainConfig(batch_size=data.n, total_steps=30, checkpoint_every=30, learning_rate=0.02)
        a = train(data, arch, cfg)[-1].params.theta
        b = train(data.subset(perm), arch, cfg, sample_ids=perm)[-1].params.theta
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_divergence_reports_step(self):
        data, arch = _tiny()
        with pytest.raises(NumericError, match="step"):
            train(data, arch, TrainConfig(total_steps=200, checkpoint_every=200, learning_rate=1e6))

    @pytest.mark.parametrize(
        "kw", [{"beta": 0}, {"batch_size": 0}, {"checkpoint_every": 0}, {"total_steps": 5, "checkpoint_every": 6}, {"learning_rate": -1}]
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            train(Dataset(np.zeros((4, 3))), VAEArch(2, 1), TrainConfig(total_steps=1, checkpoint_every=1))


class TestCheckpointFiles:
    def _ck(self):
        p = init_params(VAEArch(2, 2, (3,), (4,)), 5)
        return Checkpoint(p, 250, 0.5, 0.01, 5, 1.25, {"note": "x"})

    def test_round_trip_bitwise(self, tmp_path):
        ck = self._ck()
        save_checkpoint(ck, tmp_path / checkpoint_filename(250))
        back = load_checkpoint(tmp_path / "ckpt_0000250.vae")
        assert back == ck and back.meta == {"note": "x"} and back.loss == 1.25
        assert np.array_equal(back.params.theta, ck.params.theta)

    def test_architecture_mismatch(self, tmp_path):
        save_checkpoint(self._ck(), tmp_path / "c.vae")
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "c.vae", VAEArch(2, 2, (3,), (5,)))

    def test_corruption_detected(self, tmp_path):
        save_checkpoint(self._ck(), tmp_path / "c.vae")
        raw = bytearray((tmp_path / "c.vae").read_bytes())
        raw[-10] ^= 0xFF
        (tmp_path / "bad.vae").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(tmp_path / "bad.vae")
        (tmp_path / "short.vae").write_bytes(bytes(raw[:-20]))
        with pytest.raises(DataLengthError):
            load_checkpoint(tmp_path / "short.vae")

    def test_wrong_kind(self, tmp_path):
        write_container(tmp_path / "m.bin", "wsgmm", {}, np.zeros(3))
        with pytest.raises(FormatError, match="expected 'vae'"):
            load_checkpoint(tmp_path / "m.bin")

    def test_load_run_orders_by_step(self, tmp_path):
        p = init_params(VAEArch(1, 1, (2,), (2,)), 0)
        for step in (1000, 250, 50):
            save_checkpoint(Checkpoint(p, step, 1.0, 0.1, 0, 0.0), tmp_path / checkpoint_filename(step))
        assert [c.step for c in load_run(tmp_path)] == [50, 250, 1000]
