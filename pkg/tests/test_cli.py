"""End-to-end command-line checks; most invoke main() in process."""

import subprocess
import sys

import numpy as np
import pytest

from spoofbench.audio import read_features
from spoofbench.cli import main
from spoofbench.scores import read_scores
from spoofbench.toycorpus import make_toy_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clicorpus")
    make_toy_corpus(root, seed=9, n_train=12, n_dev=6, n_eval=6)
    return root


@pytest.fixture(scope="module")
def gmm_models(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("models") / "gmm-mfcc"
    rc = main(["train-gmm", "--manifest", str(corpus / "manifest.tsv"),
               "--kind", "mfcc", "--components", "4", "--iterations", "3",
               "--out-dir", str(out)])
    assert rc == 0
    return out


class TestBasics:
    def test_extract(self, corpus, tmp_path):
        out = tmp_path / "f.spbf"
        rc = main(["extract", "--wav",
                   str(corpus / "wav" / "eval" / "eval-0000.wav"),
                   "--kind", "mfcc", "--out", str(out)])
        assert rc == 0
        assert read_features(out).shape[1] == 96

    def test_extract_with_param_override(self, corpus, tmp_path):
        out = tmp_path / "f.spbf"
        rc = main(["extract", "--wav",
                   str(corpus / "wav" / "eval" / "eval-0000.wav"),
                   "--kind", "mfcc", "--param", "n_coeffs=20",
                   "--out", str(out)])
        assert rc == 0
        assert read_features(out).shape[1] == 60

    def test_mix_and_enhance(self, corpus, tmp_path):
        wav = corpus / "wav" / "eval" / "eval-0000.wav"
        noisy = tmp_path / "n.wav"
        assert main(["mix-noise", "--wav", str(wav), "--noise-kind",
                     "white", "--snr", "5", "--seed", "2", "--out",
                     str(noisy)]) == 0
        enh = tmp_path / "e.wav"
        assert main(["enhance", "--wav", str(noisy), "--method", "wiener",
                     "--out", str(enh)]) == 0
        assert enh.stat().st_size > 0

    def test_ltas_csv(self, corpus, tmp_path):
        out = tmp_path / "l.csv"
        rc = main(["ltas", "--wav",
                   str(corpus / "wav" / "eval" / "eval-0000.wav"),
                   "--out", str(out)])
        assert rc == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "freq_hz,power"
        assert len(rows) == 258

    def test_toy_corpus_sizes(self, tmp_path, capsys):
        rc = main(["toy-corpus", "--out-dir", str(tmp_path / "c"),
                   "--seed", "1", "--train", "4", "--dev", "2",
                   "--eval", "2"])
        assert rc == 0
        assert "manifest.tsv\t8" in capsys.readouterr().out


class TestScoringFlow:
    def test_score_and_eval(self, corpus, gmm_models, tmp_path, capsys):
        scores = tmp_path / "s.tsv"
        rc = main(["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
                   "--kind", "mfcc", "--models", str(gmm_models),
                   "--subset", "eval", "--out", str(scores)])
        assert rc == 0
        loaded = read_scores(scores)
        assert len(loaded) == 6
        capsys.readouterr()
        assert main(["eval", "--scores", str(scores), "--per-attack"]) == 0
        out = capsys.readouterr().out
        assert "eer_percent" in out and "macro-average" in out

    def test_noisy_scoring_differs(self, corpus, gmm_models, tmp_path):
        clean = tmp_path / "c.tsv"
        noisy = tmp_path / "n.tsv"
        base = ["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
                "--kind", "mfcc", "--models", str(gmm_models),
                "--subset", "eval"]
        assert main(base + ["--out", str(clean)]) == 0
        assert main(base + ["--noise-kind", "white", "--snr", "0",
                            "--seed", "4", "--condition", "white_0dB",
                            "--out", str(noisy)]) == 0
        a, b = read_scores(clean), read_scores(noisy)
        assert not np.array_equal(a.scores, b.scores)
        assert set(b.conditions) == {"white_0dB"}

    def test_ivector_flow(self, corpus, tmp_path):
        man = str(corpus / "manifest.tsv")
        ubm, tv = tmp_path / "ubm.gmm", tmp_path / "tv.stv"
        ivecs = tmp_path / "iv.tsv"
        wccn, means = tmp_path / "w.swc", tmp_path / "m.txt"
        plda = tmp_path / "p.spl"
        scores = tmp_path / "s.tsv"
        assert main(["train-ubm", "--manifest", man, "--kind", "cosphase",
                     "--components", "4", "--iterations", "3",
                     "--out", str(ubm)]) == 0
        assert main(["train-tv", "--manifest", man, "--kind", "cosphase",
                     "--ubm", str(ubm), "--rank", "4", "--iterations", "2",
                     "--out", str(tv)]) == 0
        assert main(["extract-ivec", "--manifest", man, "--subset", "train",
                     "--kind", "cosphase", "--ubm", str(ubm),
                     "--tv", str(tv), "--out", str(ivecs)]) == 0
        assert main(["train-wccn", "--ivectors", str(ivecs),
                     "--manifest", man, "--out", str(wccn),
                     "--means-out", str(means)]) == 0
        assert main(["train-plda", "--ivectors", str(ivecs),
                     "--manifest", man, "--wccn", str(wccn),
                     "--latent", "2", "--iterations", "2",
                     "--out", str(plda)]) == 0
        assert main(["score-ivec", "--manifest", man, "--kind", "cosphase",
                     "--ubm", str(ubm), "--tv", str(tv),
                     "--wccn", str(wccn), "--means", str(means),
                     "--scoring", "plda", "--plda", str(plda),
                     "--subset", "eval", "--out", str(scores)]) == 0
        assert len(read_scores(scores)) == 6

    def test_fuse_average_identity(self, corpus, gmm_models, tmp_path):
        s = tmp_path / "s.tsv"
        main(["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
              "--kind", "mfcc", "--models", str(gmm_models),
              "--subset", "eval", "--out", str(s)])
        fused = tmp_path / "f.tsv"
        assert main(["fuse", "--method", "average", "--scores", str(s),
                     str(s), "--out", str(fused)]) == 0
        assert np.array_equal(read_scores(fused).scores,
                              read_scores(s).scores)


class TestRunCommand:
    def test_run_grid(self, corpus, tmp_path, capsys):
        ini = tmp_path / "exp.ini"
        ini.write_text("[experiment]\n"
                       "seed = 3\nfeatures = mfcc\nbackends = gmm\n"
                       "fusion = none\n"
                       "[grid]\ncells = clean\n"
                       "[gmm]\ncomponents = 4\niterations = 3\n")
        work = tmp_path / "work"
        rc = main(["run", "--config", str(ini), "--manifest",
                   str(corpus / "manifest.tsv"), "--work-dir", str(work)])
        assert rc == 0
        assert (work / "summary.tsv").is_file()
        out = capsys.readouterr().out
        assert "clean\tgmm\tmfcc\teval" in out


class TestErrorContract:
    def test_missing_model_names_the_training_command(self, corpus,
                                                      tmp_path, capsys):
        rc = main(["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
                   "--kind", "mfcc", "--models", str(tmp_path / "nowhere"),
                   "--subset", "eval", "--out", str(tmp_path / "s.tsv")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error\tFileNotFoundError\t")
        assert "train-gmm" in err
        assert err.count("\n") == 1

    def test_hygiene_refusal(self, corpus, gmm_models, tmp_path, capsys):
        rc = main(["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
                   "--kind", "mfcc", "--models", str(gmm_models),
                   "--subset", "train", "--out", str(tmp_path / "s.tsv")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error\tHygieneError\t")

    def test_snr_required_with_noise(self, corpus, gmm_models, tmp_path,
                                     capsys):
        rc = main(["score-gmm", "--manifest", str(corpus / "manifest.tsv"),
                   "--kind", "mfcc", "--models", str(gmm_models),
                   "--subset", "eval", "--noise-kind", "white",
                   "--out", str(tmp_path / "s.tsv")])
        assert rc == 1
        assert "error\tValueError" in capsys.readouterr().err

    def test_entry_point_exit_codes(self, tmp_path):
        # exercise the installed console script end to end
        ok = subprocess.run(
            [sys.executable, "-m", "spoofbench.cli", "toy-corpus",
             "--out-dir", str(tmp_path / "c"), "--train", "2",
             "--dev", "2", "--eval", "2"],
            capture_output=True, text=True)
        assert ok.returncode == 0
        bad = subprocess.run(
            [sys.executable, "-m", "spoofbench.cli", "eval", "--scores",
             str(tmp_path / "missing.tsv")],
            capture_output=True, text=True)
        assert bad.returncode == 1
        assert bad.stderr.startswith("error\tFileNotFoundError\t")
        assert bad.stderr.count("\n") == 1
