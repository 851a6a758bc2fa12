import csv

import numpy as np
import pytest

from nsexit import cli, datagen
from nsexit.arch import build_model
from nsexit.checkpoint import save_checkpoint
from nsexit.dsp import istft, stft


def run_cli(*argv):
    return cli.main(["--quiet", *map(str, argv)])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run_cli("synth-data", "--out", out, "--count", "12", "--snr", "0:20",
                   "--seed", "5", "--clip-seconds", "1.0") == 0
    return out


@pytest.fixture(scope="module")
def zero_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "zero.nsc"
    model = build_model("pretrain_4exits", 0, profile="tiny")
    for t in model.params():
        t.value[...] = 0
    save_checkpoint(path, model)
    return path


# ------------------------------------------------------------------ synth-data

def test_synth_data_counts(dataset_dir):
    manifest = dataset_dir / "manifest.tsv"
    records, meta = datagen.read_manifest(manifest)
    assert len(records) == 12
    assert meta["clip_seconds"] == 1.0
    wavs = sorted(dataset_dir.glob("*.wav"))
    assert len(wavs) == 36
    assert all(0.0 <= r.snr_db <= 20.0 for r in records)
    assert sum(r.split == "val" for r in records) == 1  # 10% of 12, rounded


def test_synth_data_idempotent(dataset_dir):
    before = {p.name: p.read_bytes() for p in dataset_dir.glob("*")}
    assert run_cli("synth-data", "--out", dataset_dir, "--count", "12", "--snr",
                   "0:20", "--seed", "5", "--clip-seconds", "1.0") == 0
    after = {p.name: p.read_bytes() for p in dataset_dir.glob("*")}
    assert before == after


def test_synth_data_seed_changes_content(tmp_path):
    run_cli("synth-data", "--out", tmp_path / "a", "--count", "3", "--seed", "1",
            "--clip-seconds", "0.5")
    run_cli("synth-data", "--out", tmp_path / "b", "--count", "3", "--seed", "2",
            "--clip-seconds", "0.5")
    a = (tmp_path / "a" / "manifest.tsv").read_text()
    b = (tmp_path / "b" / "manifest.tsv").read_text()
    assert a != b


# --------------------------------------------------------------------- enhance

def test_enhance_zero_model_halves_signal(tmp_path, zero_ckpt, rng):
    x = rng.uniform(-0.5, 0.5, 16000)
    in_wav = tmp_path / "in.wav"
    out_wav = tmp_path / "out.wav"
    datagen.wav_write(in_wav, x)
    assert run_cli("enhance", "--checkpoint", zero_ckpt, "--in", in_wav,
                   "--out", out_wav, "--exit", "0") == 0
    y = datagen.wav_read(out_wav).samples
    x_read = datagen.wav_read(in_wav).samples
    ref = istft(0.5 * stft(x_read)).samples
    n = len(ref)
    assert np.max(np.abs(y[256:n - 256] - ref[256:n - 256])) < 1e-3


def test_enhance_default_exit_is_deepest_and_deterministic(tmp_path, zero_ckpt, rng):
    in_wav = tmp_path / "in2.wav"
    datagen.wav_write(in_wav, rng.uniform(-0.5, 0.5, 12000))
    out_a = tmp_path / "a.wav"
    out_b = tmp_path / "b.wav"
    out_c = tmp_path / "c.wav"
    run_cli("enhance", "--checkpoint", zero_ckpt, "--in", in_wav, "--out", out_a)
    run_cli("enhance", "--checkpoint", zero_ckpt, "--in", in_wav, "--out", out_b)
    run_cli("enhance", "--checkpoint", zero_ckpt, "--in", in_wav, "--out", out_c,
            "--exit", "5")
    assert out_a.read_bytes() == out_b.read_bytes() == out_c.read_bytes()


def test_enhance_invalid_exit(tmp_path, zero_ckpt, rng):
    in_wav = tmp_path / "in3.wav"
    datagen.wav_write(in_wav, rng.uniform(-0.5, 0.5, 8000))
    with pytest.raises(SystemExit, match="exit 2"):
        run_cli("enhance", "--checkpoint", zero_ckpt, "--in", in_wav,
                "--out", tmp_path / "x.wav", "--exit", "2")


# --------------------------------------------------------------------- profile

def test_profile_writes_csv_and_figure(tmp_path):
    out = tmp_path / "profile.csv"
    assert run_cli("profile", "--variant", "pretrain_6exits", "--out", out,
                   "--frames", "20") == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6
    assert int(rows[-1]["macs_per_frame"]) == 2_777_000
    assert (tmp_path / "profile.png").exists()


# ------------------------------------------------------------------------ eval

def test_eval_csv_round_trip(tmp_path, dataset_dir, zero_ckpt):
    out = tmp_path / "eval.csv"
    assert run_cli("eval", "--checkpoint", zero_ckpt, "--manifest",
                   dataset_dir / "manifest.tsv", "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 12
    for exit_i in (0, 1, 3, 5):
        assert f"si_sdr_exit{exit_i}" in rows[0]
    # parse back: numeric fields survive the round trip
    float(rows[0]["si_sdr_noisy"])
    buckets = list(csv.DictReader((tmp_path / "eval_snr_buckets.csv").open()))
    assert any(r["source"] == "noisy" for r in buckets)
    assert (tmp_path / "eval.png").exists()


# ----------------------------------------------------------------------- train

@pytest.mark.slow
def test_train_cli_end_to_end(tmp_path, dataset_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"""
        variant = baseline
        strategy = joint
        profile = tiny
        batch_size = 8
        max_epochs = 2
        data_manifest = {dataset_dir / 'manifest.tsv'}
        out_dir = {tmp_path / 'run'}
        seed = 3
    """)
    assert run_cli("train", "--config", cfg) == 0
    out = tmp_path / "run"
    assert (out / "ckpt_best.nsc").exists()
    assert (out / "ckpt_last.nsc").exists()
    rows = list(csv.DictReader((out / "train_report.csv").open()))
    assert len(rows) == 2
    assert (out / "train_report.png").exists()
    # resume continues epoch numbering
    cfg2 = tmp_path / "run2.cfg"
    cfg2.write_text(cfg.read_text().replace("max_epochs = 2", "max_epochs = 3"))
    assert run_cli("train", "--config", cfg2, "--resume") == 0
    rows = list(csv.DictReader((out / "train_report.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [3]


@pytest.mark.slow
def test_train_cli_layerwise_caps(tmp_path, dataset_dir):
    cfg = tmp_path / "lw.cfg"
    cfg.write_text(f"""
        variant = split_layers_4exits
        strategy = layerwise
        profile = tiny
        batch_size = 8
        max_epochs = 1
        data_manifest = {dataset_dir / 'manifest.tsv'}
        out_dir = {tmp_path / 'lw'}
        seed = 4
    """)
    assert run_cli("train", "--config", cfg) == 0
    rows = list(csv.DictReader((tmp_path / "lw" / "train_report.csv").open()))
    assert [int(r["stage"]) for r in rows] == [0, 1, 3, 5]
    with pytest.raises(SystemExit, match="resume"):
        run_cli("train", "--config", cfg, "--resume")


def test_train_missing_baseline_checkpoint_named(tmp_path, dataset_dir):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(f"""
        variant = pretrain_6exits
        profile = tiny
        data_manifest = {dataset_dir / 'manifest.tsv'}
    """)
    assert run_cli("train", "--config", cfg) == 1


def test_train_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad2.cfg"
    cfg.write_text("variant = baseline\nlearning_rate = 3\n")
    assert run_cli("train", "--config", cfg) == 1
