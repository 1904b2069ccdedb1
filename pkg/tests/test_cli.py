import json

import pytest
from click.testing import CliRunner

from uplm.cli import main


@pytest.fixture(scope="module")
def family_dir(tmp_path_factory):
    """A small synthetic family generated through the CLI."""
    root = tmp_path_factory.mktemp("family")
    spec = root / "family.cfg"
    spec.write_text(
        "family.n_languages = 4\n"
        "family.n_heldout = 1\n"
        "family.n_flags = 2\n"
        "family.sentences_per_language = 80\n"
        "family.words_per_sentence = 3\n",
        encoding="utf-8",
    )
    out = root / "data"
    result = CliRunner().invoke(
        main, ["synth", "--spec", str(spec), "--out", str(out), "--seed", "5"]
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def train_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "train.cfg"
    p.write_text(
        "model.embed_dim = 8\n"
        "model.hidden_dim = 12\n"
        "model.num_layers = 1\n"
        "train.max_epochs = 2\n"
        "train.base_lr = 2e-3\n"
        "batch.size = 32\n"
        "batch.length_mean = 30\n"
        "batch.length_std = 0\n",
        encoding="utf-8",
    )
    return p


@pytest.fixture(scope="module")
def trained(family_dir, train_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = CliRunner().invoke(
        main,
        [
            "train", "--corpus", str(family_dir / "corpus"),
            "--langs", "s00,s01,s02", "--config", str(train_cfg),
            "--out", str(out), "--seed", "3",
        ],
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def posterior_file(trained, family_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("post") / "family.posterior"
    result = CliRunner().invoke(
        main,
        [
            "fisher", "--model", str(trained / "model.ckpt"),
            "--corpus", str(family_dir / "corpus"),
            "--sigma2", "1.0", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    return out


def test_synth_outputs(family_dir):
    corpus = family_dir / "corpus"
    assert sorted(p.name for p in corpus.iterdir()) == [
        "s00.txt", "s01.txt", "s02.txt", "s03.txt"
    ]
    assert (family_dir / "typology.tsv").exists()
    assert (family_dir / "heldout.txt").read_text().strip() == "s03"
    assert (family_dir / "manifest.json").exists()


def test_train_outputs_and_manifest(trained):
    assert (trained / "model.ckpt").exists()
    assert (trained / "training_log.tsv").exists()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 3
    assert manifest["config"]["langs"] == "s00,s01,s02"


def test_train_missing_corpus_exits_3(train_cfg, tmp_path):
    result = CliRunner().invoke(
        main,
        ["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
         "--config", str(train_cfg)],
    )
    assert result.exit_code == 3
    assert "nope" in result.output


def test_train_rerun_byte_identical(family_dir, train_cfg, tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = CliRunner().invoke(
            main,
            [
                "train", "--corpus", str(family_dir / "corpus"),
                "--langs", "s00,s01", "--config", str(train_cfg),
                "--out", str(out), "--seed", "11",
            ],
        )
        assert result.exit_code == 0, result.output
        runs.append((out / "model.ckpt").read_bytes())
    assert runs[0] == runs[1]


def test_fisher_posterior_loads_with_nonnegative_f(posterior_file):
    from uplm.laplace import load_posterior

    post, arch, vocab = load_posterior(str(posterior_file))
    assert (post.fisher >= 0).all()
    assert post.sigma2 == 1.0


def test_fisher_sigma2_zero_exits_2(trained, family_dir, tmp_path):
    result = CliRunner().invoke(
        main,
        [
            "fisher", "--model", str(trained / "model.ckpt"),
            "--corpus", str(family_dir / "corpus"),
            "--sigma2", "0", "--out", str(tmp_path / "p.posterior"),
        ],
    )
    assert result.exit_code == 2


def test_fisher_rerun_identical_checksum(trained, family_dir, tmp_path):
    blobs = []
    for name in ("x.posterior", "y.posterior"):
        out = tmp_path / name
        result = CliRunner().invoke(
            main,
            [
                "fisher", "--model", str(trained / "model.ckpt"),
                "--corpus", str(family_dir / "corpus"), "--langs", "s00,s01",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


def test_finetune_univ_without_posterior_exits_2(family_dir, tmp_path):
    result = CliRunner().invoke(
        main,
        [
            "finetune", "--objective", "univ", "--lang", "s03",
            "--corpus", str(family_dir / "corpus"), "--out", str(tmp_path),
        ],
    )
    assert result.exit_code == 2


def test_finetune_lambda_zero_fitu_univ_identical(posterior_file, family_dir, tmp_path):
    outs = []
    for objective in ("fitu", "univ"):
        out = tmp_path / objective
        result = CliRunner().invoke(
            main,
            [
                "finetune", "--posterior", str(posterior_file),
                "--objective", objective, "--lambda", "0",
                "--fewshot", "10", "--lang", "s03",
                "--corpus", str(family_dir / "corpus"),
                "--out", str(out), "--seed", "2",
            ],
        )
        assert result.exit_code == 0, result.output
        outs.append((out / "model.ckpt").read_bytes())
    assert outs[0] == outs[1]


def test_eval_reports_bpc(trained, family_dir, tmp_path):
    out = tmp_path / "eval"
    result = CliRunner().invoke(
        main,
        [
            "eval", "--model", str(trained / "model.ckpt"),
            "--corpus", str(family_dir / "corpus"),
            "--split", "test", "--langs", "s00,s03", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = [l for l in result.output.splitlines() if l.startswith("s0")]
    assert len(lines) == 2
    tsv = (out / "results.tsv").read_text()
    assert "language\tregime\tprior\tconditioning\tbpc" in tsv


def test_eval_unknown_language_exits_3(trained, family_dir):
    result = CliRunner().invoke(
        main,
        [
            "eval", "--model", str(trained / "model.ckpt"),
            "--corpus", str(family_dir / "corpus"), "--langs", "zzz",
        ],
    )
    assert result.exit_code == 3


def test_generate_prints_text(trained):
    result = CliRunner().invoke(
        main,
        ["generate", "--model", str(trained / "model.ckpt"), "--length", "25",
         "--temperature", "1.0", "--seed", "4"],
    )
    assert result.exit_code == 0, result.output
    assert len(result.output.strip()) == 25


def test_generate_reproducible(trained):
    args = ["generate", "--model", str(trained / "model.ckpt"), "--length", "30",
            "--seed", "9"]
    a = CliRunner().invoke(main, args)
    b = CliRunner().invoke(main, args)
    assert a.output == b.output


def test_probe_snr_histogram_sums_to_param_count(posterior_file, tmp_path):
    from uplm.laplace import load_posterior

    out = tmp_path / "snr.tsv"
    result = CliRunner().invoke(
        main, ["probe", "snr", "--posterior", str(posterior_file), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    rows = out.read_text().strip().splitlines()[1:]
    total = sum(int(r.split("\t")[2]) for r in rows)
    post, _, _ = load_posterior(str(posterior_file))
    assert total == post.mean.size


def test_analyze_chardist(family_dir, trained, tmp_path):
    out = tmp_path / "eval"
    result = CliRunner().invoke(
        main,
        [
            "eval", "--model", str(trained / "model.ckpt"),
            "--corpus", str(family_dir / "corpus"), "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    result = CliRunner().invoke(
        main,
        [
            "analyze", "chardist", "--corpus", str(family_dir / "corpus"),
            "--results", str(out / "results.tsv"), "--out", str(tmp_path / "d.tsv"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "pearson_rho" in result.output
    body = (tmp_path / "d.tsv").read_text().strip().splitlines()
    assert len(body) == 5  # header + 4 languages


def test_unknown_flag_exits_2():
    result = CliRunner().invoke(main, ["train", "--does-not-exist", "x"])
    assert result.exit_code == 2


def test_help_lists_commands():
    result = CliRunner().invoke(main, ["--help"])
    assert result.exit_code == 0
    for cmd in ("train", "fisher", "finetune", "eval", "regime", "generate", "probe", "analyze", "synth"):
        assert cmd in result.output


def test_regime_command_runs_small_spec(tmp_path):
    spec = tmp_path / "regime.cfg"
    spec.write_text(
        "family.n_languages = 3\n"
        "family.n_heldout = 1\n"
        "family.sentences_per_language = 60\n"
        "family.words_per_sentence = 3\n"
        "regime = zero_shot\n"
        "partition.1 = s02\n"
        "dev_count = 0\n"
        "priors = ninf,univ\n"
        "seed = 1\n"
        "model.embed_dim = 8\n"
        "model.hidden_dim = 10\n"
        "model.num_layers = 1\n"
        "train.max_epochs = 1\n"
        "batch.size = 16\n"
        "fisher_max_per_lang = 5\n",
        encoding="utf-8",
    )
    out = tmp_path / "regime_out"
    result = CliRunner().invoke(main, ["regime", "--spec", str(spec), "--out", str(out)])
    assert result.exit_code == 0, result.output
    tsv = (out / "results.tsv").read_text()
    assert "s02\tzero_shot\tninf\tbare" in tsv
    assert "s02\tzero_shot\tuniv\tbare" in tsv


def test_seed_defaults_to_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv("UPLM_SEED", "77")
    spec = tmp_path / "f.cfg"
    spec.write_text(
        "family.n_languages = 3\nfamily.n_heldout = 0\n"
        "family.sentences_per_language = 10\nfamily.words_per_sentence = 2\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    result = CliRunner().invoke(main, ["synth", "--spec", str(spec), "--out", str(out)])
    assert result.exit_code == 0, result.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 77


def test_threads_flag_accepted(trained):
    result = CliRunner().invoke(
        main,
        ["--threads", "1", "generate", "--model", str(trained / "model.ckpt"),
         "--length", "5", "--seed", "1"],
    )
    assert result.exit_code == 0, result.output


def test_impute_command(tmp_path):
    table = tmp_path / "typ.tsv"
    table.write_text("lang\tf1\tf2\naaa\t0.2\t\nbbb\t0.4\t1\nccc\t0.6\t0\n", encoding="utf-8")
    dist = tmp_path / "dist.tsv"
    dist.write_text(
        "d\taaa\tbbb\tccc\naaa\t0\t1\t2\nbbb\t1\t0\t1\nccc\t2\t1\t0\n", encoding="utf-8"
    )
    out = tmp_path / "full.tsv"
    result = CliRunner().invoke(
        main,
        ["impute", "--typology", str(table), "--distances", str(dist), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    from uplm.typology import load_typology

    full = load_typology(str(out))
    assert full.is_complete()
