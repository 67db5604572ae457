import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from egobn.acoustic import (
    AcousticModel,
    SystemConfig,
    Variant,
    am_spec,
    assemble_am_input,
    decode_feature_set,
    greedy_decode,
    motor_input,
    posteriors,
    train_am,
)
from egobn.bottleneck import BNTarget, BottleneckConfig, extract_bottleneck, train_bottleneck
from egobn.corpus import build_feature_set, featurize, generate_corpus
from egobn.nn import Network, Standardizer, TrainConfig
from egobn.signal import synth_speech

FAST = TrainConfig(learning_rate=0.05, batch_size=64, epochs=4, seed=0)


def tiny_bn(target=BNTarget.PHN, dim=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(64, 165))
    y = rng.normal(size=(64, 13)) if target is BNTarget.MFCC else rng.integers(0, 2, size=64)
    return train_bottleneck(x, y, BottleneckConfig(target, dim, 2, 128, pretrain=False), TrainConfig(0.01, 32, 1),
                            n_classes=2)


class TestAssembly:
    @pytest.fixture(scope="class")
    @staticmethod
    def frames():
        rng = np.random.default_rng(1)
        return rng.normal(size=(30, 13)), rng.random(30) > 0.5

    def test_mfcc_143(self, frames):
        assert assemble_am_input("mfcc", *frames).shape == (30, 143)

    def test_mfcc_ms_165(self, frames):
        assert assemble_am_input("mfcc-ms", *frames).shape == (30, 165)

    @pytest.mark.parametrize("variant,target", [("bn-phn", BNTarget.PHN), ("bn-ms", BNTarget.MS),
                                                ("bn-mfcc", BNTarget.MFCC)])
    @pytest.mark.parametrize("dim", [40, 80])
    def test_bn_variants(self, frames, variant, target, dim):
        x = assemble_am_input(variant, *frames, bn_model=tiny_bn(target, dim))
        assert x.shape == (30, 143 + dim)

    def test_bn_part_is_bottleneck_of_motor_input(self, frames):
        bn = tiny_bn()
        x = assemble_am_input("bn-phn", *frames, bn_model=bn)
        assert np.array_equal(x[:, 143:], extract_bottleneck(bn, motor_input(*frames)))

    def test_missing_bn_model(self, frames):
        with pytest.raises(ValueError, match="needs a bottleneck"):
            assemble_am_input("bn-ms", *frames)

    def test_motor_only_enters_ms_variant(self, frames):
        f, m = frames
        assert np.array_equal(assemble_am_input("mfcc", f, m), assemble_am_input("mfcc", f, ~m))
        assert not np.array_equal(assemble_am_input("mfcc-ms", f, m), assemble_am_input("mfcc-ms", f, ~m))

    def test_misaligned_frames(self, frames):
        f, m = frames
        with pytest.raises(ValueError):
            assemble_am_input("mfcc-ms", f, m[:-1])


class TestSystemConfig:
    def test_bn_required(self):
        with pytest.raises(ValueError):
            SystemConfig(Variant.BN_PHN)

    def test_bn_forbidden_for_baseline(self):
        with pytest.raises(ValueError):
            SystemConfig(Variant.MFCC, tiny_bn())

    def test_target_must_match(self):
        with pytest.raises(ValueError, match="needs a ms bottleneck"):
            SystemConfig(Variant.BN_MS, tiny_bn(BNTarget.PHN))

    def test_valid(self):
        assert SystemConfig("bn-ms", tiny_bn(BNTarget.MS)).variant is Variant.BN_MS


class TestSpec:
    def test_canonical(self):
        spec = am_spec(183)
        assert spec.layer_sizes == (183, 512, 512, 512, 512, 512, 10)
        assert spec.activations[:-1] == ("relu",) * 5


class TestPosteriors:
    @pytest.fixture(scope="class")
    @staticmethod
    def model():
        net = Network.init(am_spec(6, 4, 2, 8), seed=3)
        return AcousticModel(net, Standardizer.identity(6))

    @given(hnp.arrays(np.float64, (5, 6), elements=st.floats(-1e3, 1e3)))
    def test_rows_are_distributions(self, model, x):
        p = posteriors(model, x)
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_model_uniform(self):
        am = AcousticModel(Network.zeros(am_spec(6, 4, 2, 8)), Standardizer.identity(6))
        assert np.allclose(posteriors(am, np.ones((3, 6))), 0.25)

    def test_argmax_agrees_with_forward(self, model):
        x = np.random.default_rng(0).normal(size=(20, 6))
        assert np.array_equal(np.argmax(posteriors(model, x), 1), np.argmax(model.network.forward(x).output, 1))

    def test_dim_mismatch(self, model):
        with pytest.raises(ValueError, match="expects 6"):
            posteriors(model, np.zeros((2, 5)))


class TestGreedyDecode:
    def onehots(self, seq, k=3):
        return np.eye(k)[seq]

    def test_collapse(self):
        assert greedy_decode(self.onehots([0, 0, 1, 1, 1, 0])) == [0, 1, 0]

    def test_single_frame(self):
        assert greedy_decode(self.onehots([2])) == [2]

    def test_tie_lowest_index(self):
        assert greedy_decode(np.array([[0.2, 0.4, 0.4], [0.5, 0.5, 0.0]])) == [1, 0]

    def test_silence_removed(self):
        assert greedy_decode(self.onehots([0, 2, 2, 1, 0]), silence=0) == [2, 1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            greedy_decode(np.zeros((0, 3)))

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 6)), elements=st.floats(0, 1)))
    def test_no_adjacent_repeats(self, post):
        out = greedy_decode(post)
        assert all(a != b for a, b in zip(out, out[1:]))
        assert 1 <= len(out) <= post.shape[0]


class TestTraining:
    def test_constant_labels_learn_prior(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(256, 5))
        am = train_am(x, np.full(256, 3), TrainConfig(0.05, 32, 5), n_hidden=2, width=16)
        assert np.all(np.argmax(posteriors(am, rng.normal(size=(50, 5))), axis=1) == 3)

    def test_labels_out_of_range(self):
        with pytest.raises(ValueError, match="labels outside"):
            train_am(np.zeros((4, 3)), np.array([0, 1, 2, 10]), FAST, n_hidden=1, width=4)

    def test_clean_corpus_above_point_eight(self):
        c = generate_corpus(60, seed=8)

        def clean(split):
            xs, ys = [], []
            for u in c.split(split):
                w, lab = synth_speech(u.spec)
                xs.append(assemble_am_input("mfcc", featurize(w), np.zeros(len(lab), bool)))
                ys.append(lab)
            return xs, ys

        train, dev = clean("train"), clean("dev")
        am = train_am(*train, TrainConfig(0.05, 64, 6, seed=1), n_hidden=2, width=64, validation=dev)
        assert am.history.val_accuracy[-1] > 0.8

    def test_deterministic_history(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(128, 6)), rng.integers(0, 10, 128)
        val = (x[:32], y[:32])
        a = train_am(x, y, FAST, n_hidden=2, width=8, validation=val)
        b = train_am(x, y, FAST, n_hidden=2, width=8, validation=val)
        assert a.history.val_accuracy == b.history.val_accuracy
        assert a.to_bytes() == b.to_bytes()


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        am = train_am(rng.normal(size=(32, 6)), rng.integers(0, 10, 32), TrainConfig(0.05, 16, 1), n_hidden=1,
                      width=8, variant="bn-ms")
        am.bn_reference = {"path": "/x/bn.egnn", "sha256": "ab"}
        back = AcousticModel.load(am.save(tmp_path / "am.egnn"))
        assert back.variant is Variant.BN_MS
        assert back.bn_reference == am.bn_reference
        assert back.to_bytes() == am.to_bytes()

    def test_wrong_kind(self, tmp_path):
        tiny_bn().save(tmp_path / "bn.egnn")
        with pytest.raises(ValueError, match="not an acoustic"):
            AcousticModel.load(tmp_path / "bn.egnn")


@settings(max_examples=3, deadline=None)
@given(st.integers(0, 1000))
def test_decode_feature_set_shapes(seed):
    fs = build_feature_set(generate_corpus(10, seed), "dev")
    x = [assemble_am_input("mfcc", f, m) for f, m in zip(fs.mfcc, fs.motor)]
    am = train_am(x, fs.labels, TrainConfig(0.05, 16, 1), n_hidden=1, width=8)
    hyps, frames = decode_feature_set(am, fs)
    assert set(hyps) == set(fs.utt_ids)
    for u, l in zip(fs.utt_ids, fs.labels):
        assert frames[u].shape == l.shape
