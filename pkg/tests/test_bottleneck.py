import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egobn.acoustic import bn_inputs, bn_targets, motor_input, train_am
from egobn.bottleneck import (
    N_HIDDEN,
    BNTarget,
    BottleneckConfig,
    BottleneckModel,
    build_bn_spec,
    extract_bottleneck,
    train_bottleneck,
)
from egobn.corpus import build_feature_set, generate_corpus
from egobn.nn import Activation, Loss, Network, TrainConfig

FAST = TrainConfig(learning_rate=0.5, batch_size=64, epochs=4, seed=1)


@pytest.fixture(scope="module")
def noisy():
    c = generate_corpus(40, seed=21)
    return build_feature_set(c, "train"), build_feature_set(c, "dev")


def small(target, dim=8, pos=2, wide=48, **kw):
    return BottleneckConfig(target, dim, pos, wide, **kw)


class TestBuildSpec:
    def test_phn_canonical(self):
        spec = build_bn_spec(BottleneckConfig(BNTarget.PHN, 40, 2), 165, 10)
        assert spec.layer_sizes == (165, 512, 40, 512, 512, 10)
        assert spec.activations[-1] is Activation.SOFTMAX
        assert spec.loss is Loss.CROSS_ENTROPY
        assert set(spec.activations[:-1]) == {Activation.SIGMOID}

    def test_ms_output_two(self):
        assert build_bn_spec(BottleneckConfig(BNTarget.MS, 40, 1), 165, 2).output_dim == 2

    def test_mfcc_regression(self):
        spec = build_bn_spec(BottleneckConfig(BNTarget.MFCC, 80, 4), 165, 13)
        assert spec.output_dim == 13
        assert spec.loss is Loss.MSE
        assert spec.activations[-1] is Activation.LINEAR
        assert set(spec.activations[:-1]) == {Activation.TANH}

    @given(st.sampled_from(list(BNTarget)), st.integers(1, 200), st.integers(1, 4))
    def test_four_hidden_one_narrow(self, target, dim, pos):
        spec = build_bn_spec(BottleneckConfig(target, dim, pos, wide_dim=256), 165, 10)
        hidden = spec.layer_sizes[1:-1]
        assert len(hidden) == N_HIDDEN
        assert hidden[pos - 1] == dim
        assert hidden.count(dim) == 1
        assert spec.bottleneck_index == pos

    @pytest.mark.parametrize("pos", [0, 5, -1])
    def test_position_out_of_range(self, pos):
        with pytest.raises(ValueError, match="bn_position"):
            BottleneckConfig(BNTarget.PHN, 40, pos)

    def test_bn_not_narrower(self):
        with pytest.raises(ValueError, match="narrower"):
            BottleneckConfig(BNTarget.PHN, 512, 2, 512)

    def test_unknown_target(self):
        with pytest.raises(ValueError):
            BottleneckConfig("senone")

    def test_pretraining_default_only_for_mfcc(self):
        assert BottleneckConfig(BNTarget.MFCC).uses_pretraining
        assert not BottleneckConfig(BNTarget.PHN).uses_pretraining
        assert BottleneckConfig(BNTarget.PHN, pretrain=True).uses_pretraining


class TestTargets:
    def test_phn_needs_labels(self):
        x = np.zeros((10, 165))
        with pytest.raises(ValueError, match="integer label"):
            train_bottleneck(x, np.zeros((10, 13)), small(BNTarget.PHN), FAST)

    def test_mfcc_needs_matrix(self):
        x = np.zeros((10, 165))
        with pytest.raises(ValueError, match="MFCC target"):
            train_bottleneck(x, np.zeros(10, dtype=int), small(BNTarget.MFCC), FAST)

    def test_ms_labels_binary(self):
        with pytest.raises(ValueError, match="outside"):
            train_bottleneck(np.zeros((10, 165)), np.full(10, 2), small(BNTarget.MS), FAST)

    def test_frame_count_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            train_bottleneck(np.zeros((10, 165)), np.zeros(9, dtype=int), small(BNTarget.PHN), FAST)


class TestTraining:
    def test_ms_recovers_motor_state(self, noisy):
        train, dev = noisy
        m = train_bottleneck(bn_inputs(train), bn_targets("ms", train), small(BNTarget.MS), FAST)
        post = m.network.predict(m.input_norm(bn_inputs(dev)))
        acc = np.mean(np.argmax(post, axis=1) == bn_targets("ms", dev))
        assert acc >= 0.99

    def test_phn_well_above_chance(self, noisy):
        train, dev = noisy
        cfg = TrainConfig(0.5, 64, 8, seed=2)
        m = train_bottleneck(bn_inputs(train), bn_targets("phn", train), small(BNTarget.PHN, 16, wide=96), cfg)
        post = m.network.predict(m.input_norm(bn_inputs(dev)))
        assert np.mean(np.argmax(post, axis=1) == dev.all_labels()) > 0.5

    def test_mfcc_target_beats_variance(self):
        # 2 latent factors spread over 165 dims and 13 targets
        rng = np.random.default_rng(4)
        z = rng.normal(size=(600, 2))
        x = z @ rng.normal(size=(2, 165))
        y = z @ rng.normal(size=(2, 13))
        cfg = TrainConfig(0.02, 32, 30, seed=3)
        m = train_bottleneck(x, y, small(BNTarget.MFCC, 16, 2, 32), cfg)
        pred = m.target_norm.inverse(m.network.predict(m.input_norm(x)))
        assert np.mean((pred - y) ** 2) < np.mean(np.var(y, axis=0))

    def test_history_logged(self, noisy):
        train, dev = noisy
        m = train_bottleneck(bn_inputs(train), bn_targets("ms", train), small(BNTarget.MS), FAST,
                             validation=(bn_inputs(dev), bn_targets("ms", dev)))
        assert len(m.history.train_loss) == FAST.epochs
        assert len(m.history.val_loss) == FAST.epochs

    def test_deterministic(self, noisy, tmp_path):
        train, _ = noisy
        x, y = bn_inputs(train)[:800], bn_targets("phn", train)[:800]
        a = train_bottleneck(x, y, small(BNTarget.PHN), FAST)
        b = train_bottleneck(x, y, small(BNTarget.PHN), FAST)
        assert a.to_bytes() == b.to_bytes()


@pytest.fixture(scope="module")
def phn_model(noisy):
    train, _ = noisy
    return train_bottleneck(bn_inputs(train), bn_targets("phn", train), small(BNTarget.PHN, 8, 2), FAST)


class TestExtraction:
    def test_dims(self, phn_model, noisy):
        assert extract_bottleneck(phn_model, bn_inputs(noisy[1])).shape[1] == 8

    def test_identical_frames_identical_rows(self, phn_model):
        x = np.tile(np.random.default_rng(0).normal(size=(1, 165)), (3, 1))
        out = extract_bottleneck(phn_model, x)
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    def test_equals_full_forward_cache(self, phn_model, noisy):
        x = bn_inputs(noisy[1])
        full = phn_model.network.forward(phn_model.input_norm(x))
        assert np.array_equal(extract_bottleneck(phn_model, x), full.activations[phn_model.config.bn_position])

    def test_preactivation_flag(self, phn_model, noisy):
        x = bn_inputs(noisy[1])
        full = phn_model.network.forward(phn_model.input_norm(x))
        pos = phn_model.config.bn_position
        assert np.array_equal(extract_bottleneck(phn_model, x, preactivation=True), full.pre_activations[pos - 1])

    def test_invariant_to_upper_layers(self, phn_model, noisy):
        x = bn_inputs(noisy[1])
        before = extract_bottleneck(phn_model, x)
        other = Network.init(phn_model.network.spec, seed=99)
        net = phn_model.network.copy()
        for l in range(phn_model.config.bn_position, len(net.layers)):
            net.layers[l] = other.layers[l]
        net.touch()
        changed = BottleneckModel(net, phn_model.config, phn_model.input_norm)
        assert np.array_equal(extract_bottleneck(changed, x), before)

    def test_motor_columns_matter(self, phn_model, noisy):
        fs = noisy[1]
        f, m = fs.mfcc[0], fs.motor[0]
        a = extract_bottleneck(phn_model, motor_input(f, m))
        b = extract_bottleneck(phn_model, motor_input(f, ~m))
        assert np.linalg.norm(a - b) > 0

    def test_dim_mismatch(self, phn_model):
        with pytest.raises(ValueError, match="do not match"):
            extract_bottleneck(phn_model, np.zeros((4, 143)))


class TestPersistence:
    def test_round_trip(self, phn_model, noisy, tmp_path):
        path = phn_model.save(tmp_path / "bn.egnn")
        back = BottleneckModel.load(path)
        assert back.config == phn_model.config
        x = bn_inputs(noisy[1])
        assert np.array_equal(extract_bottleneck(back, x), extract_bottleneck(phn_model, x))
        assert back.to_bytes() == phn_model.to_bytes()

    def test_sidecar(self, phn_model, tmp_path):
        phn_model.save(tmp_path / "bn.egnn")
        side = json.loads((tmp_path / "bn.egnn.json").read_text())
        assert side["config"]["target"] == "phn"
        assert side["config"]["bn_dim"] == 8
        assert side["config"]["bn_position"] == 2
        assert side["input_dim"] == 165

    def test_regression_norm_persisted(self, tmp_path):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(64, 165)), rng.normal(size=(64, 13))
        m = train_bottleneck(x, y, small(BNTarget.MFCC, pretrain=False), TrainConfig(0.01, 32, 1))
        back = BottleneckModel.load(m.save(tmp_path / "m.egnn"))
        assert np.array_equal(back.target_norm.mean, m.target_norm.mean)

    def test_wrong_kind(self, tmp_path):
        am = train_am(np.zeros((8, 4)), np.zeros(8, dtype=int), TrainConfig(0.1, 4, 1), n_hidden=1, width=4)
        am.save(tmp_path / "am.egnn")
        with pytest.raises(ValueError, match="not a bottleneck"):
            BottleneckModel.load(tmp_path / "am.egnn")


@settings(max_examples=5, deadline=None)
@given(st.sampled_from([BNTarget.PHN, BNTarget.MS]), st.integers(1, 4))
def test_any_position_extracts_bn_dim(target, pos):
    rng = np.random.default_rng(pos)
    x = rng.normal(size=(32, 20))
    y = rng.integers(0, 2, size=32)
    m = train_bottleneck(x, y, BottleneckConfig(target, 3, pos, 12), TrainConfig(0.1, 16, 1), n_classes=2)
    assert extract_bottleneck(m, x).shape == (32, 3)
