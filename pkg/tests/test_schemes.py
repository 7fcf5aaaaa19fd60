import numpy as np
import pytest

from uwauth import datagen as dg
from uwauth.evaluation import evaluate, optimize_threshold
from uwauth.exceptions import ConfigurationError, InputShapeError, ParseError
from uwauth.nn import TrainConfig, forward
from uwauth.schemes import (
    AE,
    CLDAE,
    GLOBAL,
    LD,
    AuthenticatorBundle,
    FeatureScaler,
    LocalEncoder,
    reconstruction_weights,
    ae_encoder_layers,
    build_global_network,
    cldae_f2_layers,
    concat_codes,
    decoder_layers,
    derive_seed,
    encode_and_fuse,
    fusion_layers,
    ld_layers,
    parse_global_config,
    train_ae_local,
    train_cldae_local,
    train_fusion,
    train_global,
    train_ld_local,
    train_local_scheme,
)

FAST = TrainConfig(learning_rate=3e-3, epochs=40, batch_size=64, early_stop_patience=10, seed=3)
PAPER_CONFIGS = {"4-3-2-1||-3-1": (1, (4, 3, 2, 1), (3, 1)),
                 "4-3-2-||-3-3-1": (2, (4, 3, 2), (3, 3, 1)),
                 "4-3-||-6-3-3-1": (3, (4, 3), (6, 3, 3, 1)),
                 "4-||-9-6-3-3-1": (4, (4,), (9, 6, 3, 3, 1))}


@pytest.fixture(scope="module")
def small_split():
    bank = dg.reference_marginals("default")
    ds = dg.generate_dataset(bank, dg.CopulaSpec(0.9, 3, 4), 3000, np.random.default_rng(0))
    tr, va, te = dg.split_dataset(ds, dg.SplitSpec(), np.random.default_rng(1))
    sc = FeatureScaler.fit(tr.X)
    return [(sc.transform(d.X), d.y) for d in (tr, va, te)]


def widths(layers):
    return [(s.width, s.activation.value) for s in layers]


class TestArchitectures:
    def test_paper_widths(self):
        assert widths(ae_encoder_layers(2)) == [(4, "relu"), (3, "relu"), (3, "relu"), (2, "relu")]
        assert widths(decoder_layers(4)) == [(3, "relu"), (3, "relu"), (4, "linear")]
        assert widths(ld_layers()) == [(4, "relu"), (3, "relu"), (2, "relu"), (1, "sigmoid")]
        assert widths(cldae_f2_layers(3)) == [(4, "relu"), (3, "relu"), (2, "relu")]

    def test_fusion_n3_m2(self):
        assert widths(fusion_layers(2, 3)) == [(6, "relu"), (3, "relu"), (1, "sigmoid")]

    def test_derive_seed_is_stable_and_distinct(self):
        assert derive_seed(1, "sensor", 0) == derive_seed(1, "sensor", 0)
        assert len({derive_seed(1, "sensor", n) for n in range(10)}) == 10
        assert derive_seed(1, "a") != derive_seed(2, "a")


class TestGlobalConfig:
    @pytest.mark.parametrize("notation", list(PAPER_CONFIGS))
    def test_paper_configs(self, notation):
        M, local, sink = PAPER_CONFIGS[notation]
        gc = parse_global_config(notation, 3, neuron_budget=34)
        assert (gc.M, gc.local_widths, gc.sink_widths, gc.total_neurons) == (M, local, sink, 34)

    @pytest.mark.parametrize("bad", ["", "4-3", "4-3||", "||3-1", "4-a||3-1", "4-3-||-3-0-1", "4--3||3-1"])
    def test_malformed(self, bad):
        with pytest.raises(ParseError):
            parse_global_config(bad, 3)

    def test_budget_and_output(self):
        with pytest.raises(ConfigurationError):
            parse_global_config("4-3-2-1||-4-1", 3, neuron_budget=34)
        with pytest.raises(ConfigurationError):
            parse_global_config("4-3-2-1||-3-2", 3)
        assert parse_global_config("4-3-2-1||-4-1", 3).total_neurons == 35

    def test_no_sharing_across_sensors(self):
        gc = parse_global_config("4-3-||-6-3-3-1", 3)
        net = build_global_network(gc, 4, seed=0)
        local = 4 * 4 + 4 + 4 * 3 + 3
        sink = 6 * 9 + 6 + 3 * 6 + 3 + 3 * 3 + 3 + 3 + 1
        assert net.n_parameters == 3 * local + sink
        assert net.n_neurons == 34


class TestAutoencoder:
    def test_constant_input_reconstructed(self):
        X = np.full((1000, 4), [3.0, -1.0, 0.5, 2.0])
        cfg = TrainConfig(learning_rate=1e-2, epochs=150, batch_size=32, early_stop_patience=0)
        enc, dec = train_ae_local((X, None), (X[:200], None), 1, cfg)
        rec = forward(dec, enc.encode(X))
        assert np.mean((rec - X) ** 2) <= 1e-4

    def test_more_code_capacity_reconstructs_better(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(4000, 3))
        X = np.column_stack([Z, Z.sum(axis=1) + 0.01 * rng.normal(size=4000)])
        cfg = TrainConfig(learning_rate=3e-3, epochs=80, batch_size=64)
        mse = {}
        for M in (1, 3):
            enc, dec = train_ae_local((X[:3000], None), (X[3000:], None), M, cfg)
            mse[M] = np.mean((forward(dec, enc.encode(X[3000:])) - X[3000:]) ** 2)
        assert mse[3] <= mse[1]

    def test_beats_mean_predictor(self, small_split):
        (X, _), (Xv, _), _ = small_split
        enc, dec = train_ae_local((X[:, 0], None), (Xv[:, 0], None), 2, FAST)
        rec = forward(dec, enc.encode(Xv[:, 0]))
        assert np.mean((rec - Xv[:, 0]) ** 2) < np.mean(Xv[:, 0].var(axis=0))


class TestLocalDecision:
    def test_separable(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 2, 3000).astype(float)
        X = rng.uniform(0, 1, size=(3000, 4)) + 3 * y[:, None]
        enc = train_ld_local((X[:2000], y[:2000]), (X[2000:], y[2000:]), FAST)
        assert np.mean((enc.encode(X[2000:])[:, 0] >= 0.5) != (y[2000:] == 1)) <= 0.01

    def test_shuffled_labels_give_chance(self, small_split):
        (X, y), (Xv, yv), (Xt, yt) = small_split
        rng = np.random.default_rng(6)
        enc = train_ld_local((X[:, 0], rng.permutation(y)), (Xv[:, 0], rng.permutation(yv)), FAST)
        yt = rng.permutation(yt)
        err = np.mean((enc.encode(Xt[:, 0])[:, 0] >= 0.5) != (yt == 1))
        assert abs(err - 0.5) <= 0.03

    def test_single_sensor_error_range(self, small_split):
        (X, y), (Xv, yv), (Xt, yt) = small_split
        for n in range(3):
            enc = train_ld_local((X[:, n], y), (Xv[:, n], yv), FAST)
            r = evaluate((enc.encode(Xv[:, n])[:, 0], yv), (enc.encode(Xt[:, n])[:, 0], yt))
            assert 0.05 <= r.epsilon <= 0.3


class TestCldae:
    def test_code_layout_and_frozen_decision(self, small_split):
        (X, y), (Xv, yv), _ = small_split
        ld = train_ld_local((X[:, 0], y), (Xv[:, 0], yv), FAST)
        enc, dec = train_cldae_local((X[:, 0], y), (Xv[:, 0], yv), 3, FAST)
        assert enc.encode(Xv[:, 0]).shape == (len(Xv), 3)
        assert enc.nets["f1"].params.tobytes() == ld.nets["f1"].params.tobytes()
        np.testing.assert_array_equal(enc.encode(Xv[:, 0])[:, :1], ld.encode(Xv[:, 0]))
        assert dec.input_dim == 3 and dec.output_dim == 4

    def test_m1_rejected(self, small_split):
        (X, y), (Xv, yv), _ = small_split
        with pytest.raises(ConfigurationError, match="LD"):
            train_cldae_local((X[:, 0], y), (Xv[:, 0], yv), 1, FAST)

    def test_reconstructs_better_than_ae_m1(self, small_split):
        (X, y), (Xv, yv), _ = small_split
        cfg = FAST.replace(epochs=80)
        ae, ae_dec = train_ae_local((X[:, 1], None), (Xv[:, 1], None), 1, cfg)
        cl, cl_dec = train_cldae_local((X[:, 1], y), (Xv[:, 1], yv), 3, cfg)
        mse_ae = np.mean((forward(ae_dec, ae.encode(Xv[:, 1])) - Xv[:, 1]) ** 2)
        mse_cl = np.mean((forward(cl_dec, cl.encode(Xv[:, 1])) - Xv[:, 1]) ** 2)
        assert mse_cl <= mse_ae

    def test_joint_mode_updates_decision(self, small_split):
        (X, y), (Xv, yv), _ = small_split
        ld = train_ld_local((X[:, 0], y), (Xv[:, 0], yv), FAST)
        enc, _ = train_cldae_local((X[:, 0], y), (Xv[:, 0], yv), 2, FAST.replace(epochs=3),
                                   freeze_decision=False, ld=ld)
        assert not np.array_equal(enc.nets["f1"].params, ld.nets["f1"].params)


class TestFusionAndBundles:
    def test_noise_encoders_give_chance(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(6000, 3, 4))
        y = rng.integers(0, 2, 6000)
        bundle = train_local_scheme(AE, 2, (X[:3000], y[:3000]), (X[3000:4000], y[3000:4000]), FAST)
        r = evaluate((bundle.scores(X[3000:4000]), y[3000:4000]), (bundle.scores(X[4000:]), y[4000:]))
        assert abs(r.epsilon - 0.5) <= 0.03

    def test_mismatched_encoders(self):
        a = LocalEncoder(LD, 1, {})
        b = LocalEncoder(AE, 2, {})
        with pytest.raises(ConfigurationError):
            train_fusion([a, b], (np.zeros((4, 2, 4)), np.zeros(4)), (np.zeros((4, 2, 4)), np.zeros(4)), FAST)

    def test_cooperation_beats_best_sensor(self, small_split):
        tr, va, te = small_split
        cache = {}
        bundle = train_local_scheme(CLDAE, 3, tr, va, FAST, ld_cache=cache, standardize=False)
        lam, _ = optimize_threshold(bundle.scores(va[0]), va[1])
        fused = evaluate((bundle.scores(va[0]), va[1]), (bundle.scores(te[0]), te[1])).epsilon
        local = [evaluate((cache[n].encode(va[0][:, n])[:, 0], va[1]),
                          (cache[n].encode(te[0][:, n])[:, 0], te[1])).epsilon for n in range(3)]
        assert fused < min(local)
        assert 0 <= lam <= 1

    def test_cldae_m1_is_ld(self, small_split):
        tr, va, te = small_split
        a = train_local_scheme(CLDAE, 1, tr, va, FAST)
        b = train_local_scheme(LD, 1, tr, va, FAST)
        assert a.scores(te[0]).tobytes() == b.scores(te[0]).tobytes()
        assert a.scheme == LD

    def test_encode_and_fuse_composition(self, small_split):
        tr, va, te = small_split
        bundle = train_local_scheme(CLDAE, 2, tr, va, FAST.replace(epochs=5))
        Xs = bundle.scaler.transform(te[0][:50])
        manual = forward(bundle.fusion, np.hstack([e.encode(Xs[:, n]) for n, e in enumerate(bundle.encoders)]))[:, 0]
        got = np.array([encode_and_fuse(bundle, F) for F in te[0][:50]])
        assert np.max(np.abs(got - manual)) <= 1e-12
        assert np.all((got > 0) & (got < 1))
        swapped = np.array([encode_and_fuse(bundle, F[[1, 0, 2]]) for F in te[0][:50]])
        assert np.any(np.abs(swapped - got) > 1e-9)
        with pytest.raises(InputShapeError):
            encode_and_fuse(bundle, np.zeros((2, 4)))

    def test_codes_are_sensor_major(self, small_split):
        tr, va, te = small_split
        bundle = train_local_scheme(AE, 2, tr, va, FAST.replace(epochs=2))
        X = te[0][:10]
        codes = concat_codes(bundle.encoders, bundle.scaler.transform(X))
        assert np.array_equal(codes, bundle.local_codes(X))
        assert np.array_equal(codes[:, 2:4], bundle.encoders[1].encode(bundle.scaler.transform(X)[:, 1]))

    @pytest.mark.parametrize("scheme,M", [(CLDAE, 2), (GLOBAL, 2)])
    def test_round_trip(self, small_split, tmp_path, scheme, M):
        tr, va, te = small_split
        cfg = FAST.replace(epochs=3)
        if scheme == GLOBAL:
            bundle = train_global(parse_global_config("4-3-2-||-3-3-1", 3), tr, va, cfg)
        else:
            bundle = train_local_scheme(scheme, M, tr, va, cfg)
        bundle.threshold = 0.25
        bundle.save(tmp_path / "b.json")
        back = AuthenticatorBundle.load(tmp_path / "b.json")
        assert back.scores(te[0]).tobytes() == bundle.scores(te[0]).tobytes()
        assert back.threshold == 0.25 and back.scheme == scheme
        assert np.array_equal(back.decide(te[0]), bundle.decide(te[0]))

    def test_global_local_halves(self, small_split):
        tr, va, te = small_split
        bundle = train_global(parse_global_config("4-3-||-6-3-3-1", 3), tr, va, FAST.replace(epochs=2))
        nets = bundle.local_networks()
        Xs = bundle.scaler.transform(te[0][:20])
        codes = np.hstack([forward(net, Xs[:, n]) for n, net in enumerate(nets)])
        np.testing.assert_allclose(codes, bundle.local_codes(te[0][:20]), rtol=1e-13, atol=1e-15)
        assert bundle.local_codes(te[0][:20]).shape == (20, 9)


def test_reconstruction_weights_restore_raw_units():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(500, 3, 4)) * np.array([2.0, 1.0, 0.5, 0.25]) + 7.0
    scaler = FeatureScaler.fit(X)
    w = reconstruction_weights(scaler, "raw")
    # weighted z-scores are the centred raw features over one per-sensor constant
    centred = X - X.mean(axis=0)
    ratio = centred / (scaler.transform(X) * w)
    assert np.allclose(ratio, ratio[:1, :, :1], rtol=1e-9)
    assert np.allclose(np.mean(w ** 2, axis=1), 1.0)
    assert np.array_equal(reconstruction_weights(scaler, "standardized"), np.ones((3, 4)))
    with pytest.raises(ConfigurationError):
        reconstruction_weights(scaler, "decibel")
