import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from waveprior.cli import main
from waveprior.corruption import Waveform
from waveprior.io import synth_signal, wav_read, wav_write
from waveprior.metrics import psnr, si_snr, stft_magnitude

SUMMARY = "clip,variant,seed,baseline_sisnr,max_sisnr,epoch_of_max,max_psnr,sisnri,final_sisnr"


@pytest.fixture
def clean_wav(tmp_path):
    path = tmp_path / "c.wav"
    wav_write(path, synth_signal("multisine", 0.25, 1))
    return path


def fit_args(target, out, *extra):
    return ["fit", "--target", str(target), "--preset", "conv-lstm", "--base-channels", "4", "--epochs", "12",
            "--lr", "1e-3", "--metric-every", "4", "--checkpoints", "4", "8", "--out-dir", str(out), *extra]


class TestCorrupt:
    def test_uniform_noise(self, tmp_path, clean_wav):
        out = tmp_path / "n.wav"
        code = main(["corrupt", "--in", str(clean_wav), "--kind", "uniform", "--target-sisnr", "2.5", "--seed", "1", "--out", str(out)])
        assert code == 0
        assert abs(si_snr(wav_read(clean_wav).samples, wav_read(out).samples) - 2.5) <= 0.05

    def test_mask_file(self, tmp_path, clean_wav):
        out = tmp_path / "m.wav"
        assert main(["corrupt", "--in", str(clean_wav), "--kind", "mask", "--mask-ms", "1", "--out", str(out)]) == 0
        mask = json.loads((tmp_path / "m.mask.json").read_text())
        assert mask["length_samples"] == 16 and mask["sample_rate"] == 16000
        assert not wav_read(out).samples[mask["start_sample"] : mask["start_sample"] + 16].any()

    def test_reverb(self, tmp_path, clean_wav):
        out = tmp_path / "r.wav"
        assert main(["corrupt", "--in", str(clean_wav), "--kind", "reverb", "--rt60", "0.2", "--out", str(out)]) == 0
        assert len(wav_read(out)) == len(wav_read(clean_wav))

    def test_reverb_without_rt60_is_usage_error(self, tmp_path, clean_wav, capsys):
        code = main(["corrupt", "--in", str(clean_wav), "--kind", "reverb", "--out", str(tmp_path / "r.wav")])
        assert code == 2 and "usage:" in capsys.readouterr().err

    def test_missing_input_is_runtime_error(self, tmp_path):
        code = main(["corrupt", "--in", str(tmp_path / "none.wav"), "--kind", "uniform", "--target-sisnr", "0", "--out", str(tmp_path / "o.wav")])
        assert code == 1

    def test_room_too_small_is_runtime_error(self, tmp_path, clean_wav):
        code = main(["corrupt", "--in", str(clean_wav), "--kind", "reverb", "--rt60", "0.02", "--room", "30", "30", "3",
                     "--source", "1", "1", "1.5", "--mic", "29", "29", "1.5", "--out", str(tmp_path / "r.wav")])
        assert code == 1


class TestFit:
    def test_outputs_with_reference(self, tmp_path, clean_wav):
        noisy = tmp_path / "n.wav"
        main(["corrupt", "--in", str(clean_wav), "--kind", "uniform", "--target-sisnr", "2.5", "--out", str(noisy)])
        out = tmp_path / "run"
        assert main(fit_args(noisy, out, "--reference", str(clean_wav))) == 0
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "epoch,l1_loss,si_snr_db,psnr_db" and len(lines) == 4
        assert (out / "out_epoch4.wav").exists() and (out / "out_epoch8.wav").exists()
        rows = list(csv.DictReader((out / "summary.csv").open()))
        assert (out / "summary.csv").read_text().splitlines()[0] == SUMMARY
        assert len(rows) == 1 and rows[0]["variant"] == "conv-lstm"
        traced = [float(line.split(",")[2]) for line in lines[1:]]
        assert float(rows[0]["max_sisnr"]) == max(traced)
        assert int(rows[0]["epoch_of_max"]) == [4, 8, 12][int(np.argmax(traced))]

    def test_without_reference(self, tmp_path, clean_wav):
        out = tmp_path / "run"
        assert main(fit_args(clean_wav, out)) == 0
        for line in (out / "trace.csv").read_text().splitlines()[1:]:
            assert line.endswith(",,")
        assert not (out / "summary.csv").exists()

    def test_rerun_is_byte_identical(self, tmp_path, clean_wav):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(fit_args(clean_wav, a, "--reference", str(clean_wav))) == 0
        assert main(fit_args(clean_wav, b, "--reference", str(clean_wav))) == 0
        for name in ["trace.csv", "out_epoch4.wav", "out_epoch8.wav", "summary.csv"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_inpainting(self, tmp_path, clean_wav):
        masked = tmp_path / "m.wav"
        main(["corrupt", "--in", str(clean_wav), "--kind", "mask", "--mask-ms", "2", "--out", str(masked)])
        out = tmp_path / "run"
        assert main(fit_args(masked, out, "--mask", str(tmp_path / "m.mask.json"), "--reference", str(clean_wav))) == 0

    def test_unknown_preset_is_usage_error(self, tmp_path, clean_wav):
        assert main(["fit", "--target", str(clean_wav), "--preset", "conv3", "--out-dir", str(tmp_path)]) == 2

    def test_reference_length_mismatch(self, tmp_path, clean_wav):
        short = tmp_path / "s.wav"
        wav_write(short, Waveform(np.ones(100)))
        assert main(fit_args(clean_wav, tmp_path / "r", "--reference", str(short))) == 2


class TestEvaluate:
    def test_identical_is_capped(self, clean_wav, capsys):
        assert main(["evaluate", "--reference", str(clean_wav), "--estimate", str(clean_wav)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["si_snr_db"] == 100.0 and report["psnr_db"] == 100.0

    def test_matches_library(self, tmp_path, capsys):
        ref, est = tmp_path / "r.wav", tmp_path / "e.wav"
        s = np.array([0.0, 1.0, 0.5, -0.25], dtype=np.float32).astype(float)
        e = np.array([0.1, 0.9, 0.5, -0.2], dtype=np.float32).astype(float)
        wav_write(ref, Waveform(s))
        wav_write(est, Waveform(e))
        assert main(["evaluate", "--reference", str(ref), "--estimate", str(est), "--corrupted", str(ref)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert abs(report["si_snr_db"] - si_snr(s, e)) < 1e-6
        assert abs(report["psnr_db"] - psnr(s, e)) < 1e-6
        assert "si_snri_db" in report

    def test_length_mismatch(self, tmp_path, clean_wav):
        short = tmp_path / "s.wav"
        wav_write(short, Waveform(np.ones(100)))
        assert main(["evaluate", "--reference", str(clean_wav), "--estimate", str(short)]) == 2


class TestSpectrogram:
    def test_tone(self, tmp_path):
        wav = tmp_path / "t.wav"
        wav_write(wav, Waveform(0.5 * np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)))
        png, table = tmp_path / "s.png", tmp_path / "s.csv"
        assert main(["spectrogram", "--in", str(wav), "--out-png", str(png), "--out-csv", str(table)]) == 0
        img = np.asarray(Image.open(png))
        frames = 1 + (16000 - 1024) // 256
        assert Image.open(png).size == (frames, 513)
        # low frequencies at the bottom: bin b sits on row 512 - b
        assert np.all(img.argmax(axis=0) == 512 - 64)
        mat = np.loadtxt(table, delimiter=",")
        assert mat.shape == (frames, 513) and np.all(mat.argmax(axis=1) == 64)

    def test_zero_signal_is_black(self, tmp_path):
        wav = tmp_path / "z.wav"
        wav_write(wav, Waveform(np.zeros(2048)))
        png = tmp_path / "z.png"
        assert main(["spectrogram", "--in", str(wav), "--out-png", str(png)]) == 0
        assert not np.asarray(Image.open(png)).any()

    def test_too_short(self, tmp_path):
        wav = tmp_path / "z.wav"
        wav_write(wav, Waveform(np.zeros(100)))
        assert main(["spectrogram", "--in", str(wav), "--out-png", str(tmp_path / "z.png")]) == 1

    def test_csv_matches_library(self, tmp_path, clean_wav):
        table = tmp_path / "s.csv"
        main(["spectrogram", "--in", str(clean_wav), "--out-png", str(tmp_path / "s.png"), "--out-csv", str(table)])
        assert np.allclose(np.loadtxt(table, delimiter=","), stft_magnitude(wav_read(clean_wav).samples), rtol=1e-9)


class TestAblate:
    def write_config(self, tmp_path, **kw):
        cfg = {"variants": ["conv2", "conv-glu"], "clips": ["synth:multisine:0:0.25", "synth:am_tone:1:0.25"],
               "seeds": [0], "epochs": 6, "lr": 1e-3, "metric_every": 2, "base_channels": 4, "output": "abl.csv"}
        cfg.update(kw)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_rows_and_aggregates(self, tmp_path):
        path = self.write_config(tmp_path)
        assert main(["ablate", "--config", str(path), "--jobs", "2"]) == 0
        text = (tmp_path / "abl.csv").read_text()
        assert text.splitlines()[0] == SUMMARY
        rows = list(csv.DictReader(text.splitlines()))
        assert len(rows) == 6
        runs = [r for r in rows if r["clip"] != "MEAN"]
        means = [r for r in rows if r["clip"] == "MEAN"]
        assert len(runs) == 4 and [m["variant"] for m in means] == ["conv2", "conv-glu"]
        for m in means:
            mine = [float(r["max_sisnr"]) for r in runs if r["variant"] == m["variant"]]
            assert abs(float(m["max_sisnr"]) - np.mean(mine)) < 1e-9

    def test_parallel_matches_serial(self, tmp_path):
        path = self.write_config(tmp_path, output="one.csv")
        assert main(["ablate", "--config", str(path), "--jobs", "1"]) == 0
        assert main(["ablate", "--config", str(path), "--jobs", "2", "--output", str(tmp_path / "two.csv")]) == 0
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()

    def test_bad_config_is_usage_error(self, tmp_path):
        path = self.write_config(tmp_path, bogus=1)
        assert main(["ablate", "--config", str(path)]) == 2
        assert main(["ablate", "--config", str(tmp_path / "missing.json")]) == 2


class TestExitCodes:
    def test_no_command(self):
        assert main([]) == 2

    def test_unknown_command(self):
        assert main(["train"]) == 2

    def test_help(self):
        assert main(["--help"]) == 0

    def test_synth(self, tmp_path):
        assert main(["synth", "--kind", "chirp", "--duration", "0.5", "--out", str(tmp_path / "c.wav")]) == 0
        assert len(wav_read(tmp_path / "c.wav")) == 8000

    def test_synth_bad_duration_is_runtime_error(self, tmp_path):
        assert main(["synth", "--duration", "9", "--out", str(tmp_path / "c.wav")]) == 1

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "waveprior.cli", "corrupt", "--kind", "reverb"], capture_output=True)
        assert proc.returncode == 2
