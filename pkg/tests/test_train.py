import math

import numpy as np
import pytest

from vlrefine.embed import hash_provider
from vlrefine.errors import Divergence
from vlrefine.synth import SynthConfig, generate_vtg_dataset
from vlrefine.train import (
    TrainConfig,
    config_dict,
    evaluate,
    load_checkpoint,
    prepare,
    save_checkpoint,
    substream,
    train_vtg,
)
from vlrefine.heads import VtgLabelConfig

CFG = SynthConfig(n_samples=6, n_f=2, t=16, c=8, n_concepts=4, seed=11, amplitude=3.0)


@pytest.fixture(scope="module")
def data():
    prov = hash_provider(8, 11)
    train = generate_vtg_dataset(CFG, prov)
    test = generate_vtg_dataset(SynthConfig(**{**CFG.__dict__, "n_samples": 3}), prov, offset=6)
    return train, test, prov


def fast(**kw):
    base = dict(epochs=2, lr=1e-2, batch_size=4, heads=2)
    base.update(kw)
    return TrainConfig(**base)


def flat(params):
    return np.concatenate([p.data.ravel() for p in params.parameters()])


def test_substreams_are_independent_and_stable():
    a, b = substream(1, "init").random(4), substream(1, "shuffle").random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, substream(1, "init").random(4))


def test_zero_epochs_is_untrained_baseline(data):
    train, test, prov = data
    res = train_vtg(train, test, prov, fast(epochs=0))
    assert len(res.history) == 1 and res.history[0]["loss"] is None
    fresh = train_vtg(train, test, prov, fast(epochs=0))
    assert np.array_equal(flat(res.params), flat(fresh.params))
    items = prepare(test, prov, VtgLabelConfig())
    assert evaluate(res.params, fast().refiner_config(), items) == res.final


@pytest.mark.parametrize("variant", ["full", "joint", "no-lang", "parallel-sum"])
def test_training_is_deterministic(data, variant):
    train, test, prov = data
    a = train_vtg(train, test, prov, fast(variant=variant))
    b = train_vtg(train, test, prov, fast(variant=variant))
    assert np.array_equal(flat(a.params), flat(b.params))
    assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]


def test_threads_match_single_thread(data):
    train, test, prov = data
    a = train_vtg(train, test, prov, fast())
    b = train_vtg(train, test, prov, fast(threads=3))
    assert np.array_equal(flat(a.params), flat(b.params))


def test_loss_decreases(data):
    train, test, prov = data
    res = train_vtg(train, test, prov, fast(epochs=8))
    losses = [h["loss"] for h in res.history[1:]]
    assert losses[-1] < losses[0]


def test_divergence_guard(data):
    train, test, prov = data
    bad = [train[0]]
    bad[0] = type(train[0])(**{**train[0].__dict__, "grid": np.full_like(train[0].grid, np.nan)})
    with pytest.raises(Divergence):
        train_vtg(bad, test, prov, fast(epochs=1))


def test_cosine_schedule():
    cfg = TrainConfig(lr=0.1, lr_schedule="cosine")
    assert cfg.lr_at(0, 10) == pytest.approx(0.1)
    assert cfg.lr_at(5, 10) == pytest.approx(0.05)
    assert cfg.lr_at(10, 10) == pytest.approx(0.0, abs=1e-15)
    assert TrainConfig(lr=0.1).lr_at(7, 10) == 0.1


def test_config_validation():
    for bad in (dict(epochs=-1), dict(batch_size=0), dict(threads=0), dict(lr_schedule="step")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_checkpoint_round_trip(tmp_path, data):
    train, test, prov = data
    for variant in ("full", "joint"):
        res = train_vtg(train, test, prov, fast(variant=variant, epochs=1))
        cfg = fast(variant=variant)
        save_checkpoint(tmp_path / variant, res.params, {"config": config_dict(cfg)})
        params, meta = load_checkpoint(tmp_path / variant)
        assert meta["config"]["variant"] == variant
        for (n1, p1), (n2, p2) in zip(res.params.named_parameters(), params.named_parameters()):
            assert n1 == n2
            np.testing.assert_allclose(p1.data, p2.data, atol=1e-6 * max(1.0, np.abs(p1.data).max()))


def test_checkpoint_is_byte_stable(tmp_path, data):
    train, test, prov = data
    res = train_vtg(train, test, prov, fast(epochs=1))
    save_checkpoint(tmp_path / "a", res.params)
    save_checkpoint(tmp_path / "b", res.params)
    assert (tmp_path / "a.prtk").read_bytes() == (tmp_path / "b.prtk").read_bytes()
    assert math.isfinite(res.history[-1]["loss"])
