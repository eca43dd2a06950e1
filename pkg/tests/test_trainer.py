import numpy as np
import pytest

from waveprior import tensor as T
from waveprior.architectures import build_network, get_preset
from waveprior.corruption import MaskInterval, add_noise
from waveprior.io import synth_signal
from waveprior.metrics import MetricReport
from waveprior.trainer import FitTrace, TrainConfig, fit_prior, sample_input_noise, trace_summary

SMALL = get_preset("conv-lstm", base_channels=4)


@pytest.fixture(scope="module")
def clip():
    clean = synth_signal("multisine", 0.25, 1)
    return clean, add_noise(clean, "uniform", 2.5, seed=1)


def small_cfg(**kw):
    base = dict(epochs=40, lr=1e-3, metric_every=5, checkpoint_epochs=(10, 20), resample_noise_each_epoch=False)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.lr, cfg.input_noise_std, cfg.metric_every) == (3000, 1e-4, 0.1, 10)
        assert cfg.checkpoint_epochs == (500, 1000)

    @pytest.mark.parametrize("kw", [{"epochs": -1}, {"input_noise_std": 0.0}, {"metric_every": 0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestInputNoise:
    def test_deterministic(self):
        assert np.array_equal(sample_input_noise(100, 0.1, 3, 7).data, sample_input_noise(100, 0.1, 3, 7).data)

    def test_epochs_differ(self):
        assert not np.array_equal(sample_input_noise(100, 0.1, 0, 0).data, sample_input_noise(100, 0.1, 0, 1).data)

    def test_moment(self):
        x = sample_input_noise(1_000_000, 0.1, 0, 0).data
        assert x.shape == (1, 1_000_000) and abs(x.std() / 0.1 - 1) < 0.01

    def test_length(self):
        with pytest.raises(ValueError):
            sample_input_noise(0)


class TestFitPrior:
    def test_zero_epochs(self, clip):
        clean, noisy = clip
        res = fit_prior(SMALL, noisy, small_cfg(epochs=0), reference=clean)
        assert len(res.trace) == 0
        expect = build_network(SMALL, 0)(sample_input_noise(len(noisy), 0.1, 0, 0)).data[0]
        assert np.array_equal(res.final_output, expect)

    def test_trace_schedule(self, clip):
        clean, noisy = clip
        res = fit_prior(SMALL, noisy, small_cfg(epochs=23, checkpoint_epochs=(7,)), reference=clean)
        assert res.trace.epochs == [5, 7, 10, 15, 20, 23]
        assert set(res.trace.checkpoints) == {7}
        assert len(res.losses) == 23

    def test_oracle_best(self, clip):
        clean, noisy = clip
        res = fit_prior(SMALL, noisy, small_cfg(), reference=clean)
        i = int(np.argmax(res.trace.si_snr_db))
        assert res.best_epoch == res.trace.epochs[i]
        assert res.baseline.si_snr_db == pytest.approx(2.5, abs=0.05)

    def test_no_reference(self, clip):
        _, noisy = clip
        res = fit_prior(SMALL, noisy, small_cfg())
        assert res.best_output is None and res.baseline is None
        assert all(np.isnan(res.trace.si_snr_db))
        assert "epoch,l1_loss,si_snr_db,psnr_db\n5," in res.trace.to_csv()
        assert res.trace.to_csv().splitlines()[1].endswith(",,")

    def test_deterministic(self, clip):
        clean, noisy = clip
        a = fit_prior(SMALL, noisy, small_cfg(), reference=clean)
        b = fit_prior(SMALL, noisy, small_cfg(), reference=clean)
        assert a.trace.to_csv() == b.trace.to_csv()
        assert np.array_equal(a.final_output, b.final_output)

    def test_loss_trends_down(self, clip):
        _, noisy = clip
        res = fit_prior(SMALL, noisy, small_cfg(epochs=100))
        assert np.mean(res.losses[-10:]) < np.mean(res.losses[:10])

    @pytest.mark.parametrize("pert", [None, 0.03])
    def test_resampling_modes_run(self, clip, pert):
        clean, noisy = clip
        cfg = small_cfg(epochs=10, resample_noise_each_epoch=True, perturbation_std=pert)
        assert len(fit_prior(SMALL, noisy, cfg, reference=clean).trace) == 2

    def test_mask_requires_fixed_noise(self, clip):
        _, noisy = clip
        with pytest.raises(ValueError, match="fixed input noise"):
            fit_prior(SMALL, noisy, small_cfg(resample_noise_each_epoch=True), mask=MaskInterval(100, 16))

    def test_masked_output_gradient_is_zero(self, clip):
        _, noisy = clip
        m = MaskInterval(200, 16)
        seen = []

        def check(epoch, out, loss):
            seen.append(epoch)
            assert not out.grad[0, 200:216].any()

        fit_prior(SMALL, noisy, small_cfg(epochs=5), mask=m, callback=check)
        assert seen == [1, 2, 3, 4, 5]

    def test_reference_length(self, clip):
        clean, noisy = clip
        with pytest.raises(ValueError, match="reference length"):
            fit_prior(SMALL, noisy, small_cfg(), reference=clean.samples[:-1])

    def test_too_short(self):
        with pytest.raises(ValueError):
            fit_prior(SMALL, np.ones(4), small_cfg())

    def test_divergence_reports_epoch(self, clip):
        _, noisy = clip

        def poison(epoch, out, loss):
            if epoch == 3:
                net_params[0].data[:] = np.nan

        net_params = []
        orig = build_network

        import waveprior.trainer as tr

        def spy(variant, seed):
            net = orig(variant, seed)
            net_params.extend(net.parameters())
            return net

        tr.build_network, saved = spy, tr.build_network
        try:
            with pytest.raises(FloatingPointError, match="epoch 4"):
                fit_prior(SMALL, noisy, small_cfg(), callback=poison)
        finally:
            tr.build_network = saved

    def test_early_stop(self, clip):
        _, noisy = clip
        cfg = small_cfg(epochs=500, early_stop=True, early_stop_window=5, early_stop_tol=10.0)
        res = fit_prior(SMALL, noisy, cfg)
        assert len(res.losses) == 6 and res.trace.epochs[-1] == 6


class TestTrace:
    def test_epochs_must_increase(self):
        t = FitTrace()
        t.append(5, 1.0)
        with pytest.raises(ValueError, match="increase"):
            t.append(5, 1.0)

    def test_loss_must_be_finite(self):
        with pytest.raises(FloatingPointError):
            FitTrace().append(1, np.inf)

    def test_summary_argmax(self):
        t = FitTrace()
        for e, s in zip([10, 20, 30], [-1.0, 3.0, 2.0]):
            t.append(e, 0.1, s, s + 10)
        out = trace_summary(t, MetricReport(0.5, 9.0))
        assert out["max_sisnr"] == 3.0 and out["epoch_of_max"] == 20
        assert out["max_psnr"] == 13.0 and out["final_sisnr"] == 2.0
        assert abs(out["sisnri"] - (3.0 - 0.5)) < 1e-12

    def test_summary_single_entry(self):
        t = FitTrace()
        t.append(1, 0.2, 4.0, 5.0)
        assert trace_summary(t, MetricReport(1.0, 1.0))["epoch_of_max"] == 1

    def test_summary_needs_reference(self):
        t = FitTrace()
        t.append(1, 0.2)
        with pytest.raises(ValueError, match="no reference"):
            trace_summary(t, MetricReport(1.0, 1.0))
