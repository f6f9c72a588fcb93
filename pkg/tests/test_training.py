import numpy as np
import pytest

from bglstm import cells
from bglstm.errors import DegenerateDataError
from bglstm.network import AutoencoderConfig, build_autoencoder
from bglstm.numerics import Rng
from bglstm.training import train_model


def tiny_model(seed=9):
    cfg = AutoencoderConfig(frame_dim=5, seq_len=2, hidden_dims=(3, 2, 3),
                            variant=cells.bi_gated(), seed=seed)
    return build_autoencoder(cfg)


def data(n, seed=4):
    return Rng(seed).uniform((n, 2, 5), -1, 1)


class TestTrainModel:
    def test_history_and_determinism(self):
        def run():
            model = tiny_model()
            res = train_model(model, data(12), data(3, seed=5), epochs=4,
                              batch_size=4, lr=1e-3, shuffle_seed=2)
            return [(h.train_loss, h.val_loss) for h in res.history]

        a, b = run(), run()
        assert len(a) == 4
        assert a == b

    def test_best_epoch_tracking(self):
        model = tiny_model()
        fake_aucs = iter([0.6, 0.9, 0.7, 0.9])

        def eval_fn(m):
            return next(fake_aucs), 0.2

        res = train_model(model, data(10), data(2, seed=6), epochs=4,
                          batch_size=4, lr=1e-3, eval_fn=eval_fn)
        assert res.best_epoch == 1  # first of the tied 0.9s wins (strictly greater)
        assert res.best_arrays is not None

    def test_restore_best_changes_params(self):
        model = tiny_model()
        aucs = iter([0.9, 0.2, 0.2])
        res = train_model(model, data(10), data(2), epochs=3, batch_size=4,
                          lr=5e-2, eval_fn=lambda m: (next(aucs), 0.5))
        drifted = {k: v.copy() for k, v in model.params().items()}
        best = res.restore_best()
        assert any(
            not np.array_equal(drifted[k], best.params()[k]) for k in drifted
        )
        assert np.array_equal(
            best.params()["layer0.W_i"], res.best_arrays["layer0.W_i"]
        )

    def test_ties_broken_by_lower_eer(self):
        model = tiny_model()
        stats = iter([(0.8, 0.4), (0.8, 0.1), (0.8, 0.3)])
        res = train_model(model, data(10), data(2), epochs=3, batch_size=4,
                          lr=1e-3, eval_fn=lambda m: next(stats))
        assert res.best_epoch == 1

    def test_too_few_cuboids_rejected(self):
        with pytest.raises(DegenerateDataError):
            train_model(tiny_model(), data(1), data(1), epochs=1)

    def test_undersized_trailing_batch_dropped(self):
        # 5 cuboids with batch 4 leaves a 1-cuboid tail that batch norm
        # cannot consume; the epoch must still run
        model = tiny_model()
        res = train_model(model, data(5), data(2), epochs=1, batch_size=4, lr=1e-3)
        assert np.isfinite(res.history[0].train_loss)

    def test_start_epoch_offsets_history(self):
        model = tiny_model()
        res = train_model(model, data(8), data(2), epochs=2, batch_size=4,
                          lr=1e-3, start_epoch=5)
        assert [h.epoch for h in res.history] == [5, 6]
