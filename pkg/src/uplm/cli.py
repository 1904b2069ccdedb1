"""Command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 data/IO error, 4 numeric
failure. Every command that writes to --out also writes a manifest.json
recording the merged configuration and input hashes; rerunning the same
invocation reproduces the other outputs byte for byte.
"""

from __future__ import annotations

import functools
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import evaluation, laplace, synth
from .checkpoint import load_params, save_params
from .config import arch_from_config, parse_config_file, train_config_from
from .corpus import (
    build_vocabulary,
    load_corpus_dir,
    sample_fewshot,
    split_dataset,
    unigram_distribution,
)
from .errors import ConfigError, DataError, NumericError, UplmError
from .evaluation import (
    RegimeConfigs,
    RegimeSpec,
    ResultRow,
    ResultTable,
    bpc,
    char_distance_analysis,
    run_regime,
)
from .manifest import write_manifest
from .model import sample_text
from .training import (
    FEWSHOT_EPOCHS,
    FinetuneConfig,
    LogRow,
    finetune,
    train_mle,
)
from .typology import TypologyTable, load_typology, save_typology


def default_seed() -> int:
    return int(os.environ.get("UPLM_SEED", "0"))


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except DataError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3)
        except NumericError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(4)
        except UplmError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


def _cap_threads(n: int) -> None:
    """Best-effort cap on BLAS worker threads (the package itself is
    single-threaded; matrix products are the only parallel sites)."""
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import ctypes

        for lib in ("libopenblas.so.0", "libopenblas.so"):
            try:
                ctypes.CDLL(lib).openblas_set_num_threads(n)
                return
            except (OSError, AttributeError):
                continue
    except Exception:
        pass


@click.group()
@click.option("--threads", type=int, default=None, help="Cap BLAS worker threads.")
def main(threads):
    """Cross-lingual character language modeling with a weight prior."""
    if threads is not None:
        if threads < 1:
            raise click.UsageError("--threads must be >= 1")
        _cap_threads(threads)


def _comma_list(value: str | None) -> list[str] | None:
    if not value:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _load_corpus(corpus_dir: str, split_seed: int):
    """All languages in the directory: vocabulary covers every one of
    them (held-out languages included), then each is split 80-10-10."""
    raws = load_corpus_dir(corpus_dir)
    vocab = build_vocabulary(list(raws.values()))
    datasets = {
        lang: split_dataset(raw, vocab, seed=split_seed) for lang, raw in raws.items()
    }
    return vocab, datasets


def _conditioning_map(kind: str, typology_path: str | None, langs):
    if kind == "bare":
        return None, 0
    if not typology_path:
        raise ConfigError(f"conditioning {kind!r} requires --typology")
    table = load_typology(typology_path)
    if not table.is_complete():
        raise ConfigError("typology table has missing values; impute it first")
    vectors = {lang: table.vector(lang) for lang in langs}
    return vectors, table.n_features


def _write_log(path: str, rows: list[LogRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tsplit\tlanguage\tbpc\tlr\n")
        for r in rows:
            fh.write(f"{r.epoch}\t{r.split}\t{r.language}\t{r.bpc:.6f}\t{r.lr:.3e}\n")


@main.command(name="synth")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=default_seed)
@guarded
def cmd_synth(spec_path, out_dir, seed):
    """Generate a synthetic language family: corpus files plus typology."""
    cfg = parse_config_file(spec_path)
    spec = _family_spec(cfg)
    raws, typology, heldout = synth.generate_synthetic_family(spec, seed)
    corpus_dir = os.path.join(out_dir, "corpus")
    os.makedirs(corpus_dir, exist_ok=True)
    for lang, raw in raws.items():
        with open(os.path.join(corpus_dir, f"{lang}.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(raw.sentences) + "\n")
    langs = sorted(raws)
    table = TypologyTable(
        langs,
        [f"flag{k}" for k in range(spec.n_flags)],
        np.array([typology[lang] for lang in langs]),
        np.zeros((len(langs), spec.n_flags), dtype=bool),
    )
    save_typology(os.path.join(out_dir, "typology.tsv"), table)
    with open(os.path.join(out_dir, "heldout.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(heldout) + "\n")
    write_manifest(out_dir, "synth", cfg, seed, [spec_path])
    click.echo(f"wrote {len(raws)} languages under {corpus_dir}")


def _family_spec(cfg: dict) -> synth.FamilySpec:
    spec = synth.FamilySpec()
    updates = {}
    for key, value in cfg.items():
        if not key.startswith("family."):
            continue
        name = key[len("family.") :]
        if name == "seed":  # consumed by the caller, not part of the spec
            continue
        if not hasattr(spec, name):
            raise ConfigError(f"unknown family spec key {key!r}")
        current = getattr(spec, name)
        if isinstance(current, float):
            updates[name] = float(value)
        elif isinstance(current, int):
            updates[name] = int(value)
        else:
            updates[name] = value
    return replace(spec, **updates)


@main.command(name="train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--langs", default=None, help="Comma-separated training languages.")
@click.option("--dev-langs", default=None, help="Languages whose dev split drives early stopping.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--conditioning", type=click.Choice(["bare", "oest", "plat"]), default="bare")
@click.option("--typology", "typology_path", default=None, type=click.Path())
@click.option("--seed", type=int, default=default_seed)
@guarded
def cmd_train(corpus_dir, langs, dev_langs, config_path, out_dir, conditioning, typology_path, seed):
    """MAP-train a model on the chosen languages and checkpoint the mode."""
    if not os.path.isdir(corpus_dir):
        raise DataError(f"corpus directory not found: {corpus_dir}")
    cfg = parse_config_file(config_path) if config_path else {}
    vocab, datasets = _load_corpus(corpus_dir, seed)
    train_langs = _comma_list(langs) or sorted(datasets)
    dev = _comma_list(dev_langs) or []
    for lang in train_langs + dev:
        if lang not in datasets:
            raise DataError(f"language {lang!r} not found in {corpus_dir}")
    vectors, n_feat = _conditioning_map(conditioning, typology_path, train_langs + dev)
    arch = arch_from_config(cfg, vocab.size, conditioning, n_feat)
    tcfg = train_config_from(cfg, seed)
    cond = (
        {lang: evaluation.conditioning_for(conditioning, vectors, lang) for lang in train_langs + dev}
        if vectors
        else None
    )
    params, log = train_mle(
        [datasets[lang] for lang in train_langs],
        arch,
        tcfg,
        [datasets[lang] for lang in dev] or None,
        cond,
    )
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt")
    save_params(ckpt, params, arch, vocab, meta={"split_seed": seed, "train_langs": train_langs})
    _write_log(os.path.join(out_dir, "training_log.tsv"), log)
    write_manifest(
        out_dir, "train", {**cfg, "langs": ",".join(train_langs)}, seed,
        [config_path] if config_path else [], [ckpt],
    )
    click.echo(f"wrote {ckpt}")


@main.command(name="fisher")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--langs", default=None)
@click.option("--sigma2", type=float, default=1.0, show_default=True)
@click.option("--typology", "typology_path", default=None, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@guarded
def cmd_fisher(model_path, corpus_dir, langs, sigma2, typology_path, out_path):
    """Accumulate the Fisher diagonal at a checkpoint and write the posterior."""
    if sigma2 <= 0:
        raise ConfigError("--sigma2 must be positive")
    if not os.path.isdir(corpus_dir):
        raise DataError(f"corpus directory not found: {corpus_dir}")
    params, arch, vocab, meta = load_params(model_path)
    split_seed = int(meta.get("split_seed", 0))
    _, datasets = _load_corpus(corpus_dir, split_seed)
    use_langs = _comma_list(langs) or meta.get("train_langs") or sorted(datasets)
    for lang in use_langs:
        if lang not in datasets:
            raise DataError(f"language {lang!r} not found in {corpus_dir}")
    vectors, _ = _conditioning_map(arch.conditioning, typology_path, use_langs)
    cond = (
        {lang: evaluation.conditioning_for(arch.conditioning, vectors, lang) for lang in use_langs}
        if vectors
        else None
    )
    fisher = laplace.fisher_diagonal(
        params, arch, [datasets[lang] for lang in use_langs], cond
    )
    posterior = laplace.assemble_posterior(params.flat, fisher, sigma2, params.layout)
    laplace.save_posterior(out_path, posterior, arch, vocab)
    out_dir = os.path.dirname(out_path) or "."
    write_manifest(
        out_dir, "fisher", {"sigma2": sigma2, "langs": ",".join(use_langs)},
        split_seed, [model_path], [out_path],
    )
    click.echo(f"wrote {out_path}")


@main.command(name="finetune")
@click.option("--posterior", "posterior_path", default=None, type=click.Path())
@click.option("--objective", type=click.Choice(["univ", "ninf", "fitu"]), required=True)
@click.option("--lambda", "lam", type=float, default=None, help="Penalty weight (defaults per objective).")
@click.option("--fewshot", "fewshot_n", type=int, default=100, show_default=True)
@click.option("--lang", required=True)
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--typology", "typology_path", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=default_seed)
@guarded
def cmd_finetune(posterior_path, objective, lam, fewshot_n, lang, corpus_dir, config_path,
                 typology_path, out_dir, seed):
    """Fit a held-out language on a small sample under univ/ninf/fitu."""
    if posterior_path is None:
        raise ConfigError(f"--posterior is required (it defines the model for {objective})")
    if not os.path.isdir(corpus_dir):
        raise DataError(f"corpus directory not found: {corpus_dir}")
    posterior, arch, vocab = laplace.load_posterior(posterior_path)
    cfg = parse_config_file(config_path) if config_path else {}
    split_seed = int(cfg.get("split_seed", seed))
    _, datasets = _load_corpus(corpus_dir, split_seed)
    if lang not in datasets:
        raise DataError(f"language {lang!r} not found in {corpus_dir}")
    vectors, _ = _conditioning_map(arch.conditioning, typology_path, [lang])
    cond = evaluation.conditioning_for(arch.conditioning, vectors, lang)
    sample = sample_fewshot(datasets[lang], fewshot_n, seed)
    tcfg = train_config_from(cfg, seed, prefix="finetune")
    if "finetune.max_epochs" not in cfg:
        tcfg = replace(tcfg, max_epochs=FEWSHOT_EPOCHS)
    fcfg = FinetuneConfig(objective=objective, lam=lam, posterior=posterior)
    params, log = finetune(sample, lang, arch, fcfg, tcfg, None, cond)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt")
    # objective/lambda are recorded in the manifest only, so runs that
    # provably coincide (fitu vs univ at lambda 0) emit identical bytes
    save_params(ckpt, params, arch, vocab, meta={"split_seed": split_seed, "language": lang})
    _write_log(os.path.join(out_dir, "training_log.tsv"), log)
    write_manifest(
        out_dir, "finetune",
        {**cfg, "objective": objective, "lambda": lam, "fewshot": fewshot_n, "lang": lang},
        seed, [posterior_path], [ckpt],
    )
    click.echo(f"wrote {ckpt}")


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--split", type=click.Choice(["train", "dev", "test"]), default="test", show_default=True)
@click.option("--langs", default=None)
@click.option("--typology", "typology_path", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
@guarded
def cmd_eval(model_path, corpus_dir, split, langs, typology_path, out_dir):
    """Report BPC of a checkpoint on corpus splits."""
    if not os.path.isdir(corpus_dir):
        raise DataError(f"corpus directory not found: {corpus_dir}")
    params, arch, vocab, meta = load_params(model_path)
    split_seed = int(meta.get("split_seed", 0))
    _, datasets = _load_corpus(corpus_dir, split_seed)
    use_langs = _comma_list(langs) or sorted(datasets)
    vectors, _ = _conditioning_map(arch.conditioning, typology_path, use_langs)
    table = ResultTable()
    for lang in use_langs:
        if lang not in datasets:
            raise DataError(f"language {lang!r} not found in {corpus_dir}")
        cond = evaluation.conditioning_for(arch.conditioning, vectors, lang)
        seqs = datasets[lang].split(split)
        if not seqs:
            raise DataError(f"language {lang!r} has an empty {split} split")
        score = bpc(params, arch, seqs, cond)
        table.add(ResultRow(lang, f"eval-{split}", "-", arch.conditioning, score))
        click.echo(f"{lang}\t{score:.4f}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        out_path = os.path.join(out_dir, "results.tsv")
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(table.to_tsv())
        write_manifest(
            out_dir, "eval", {"split": split, "langs": ",".join(use_langs)},
            split_seed, [model_path], [out_path],
        )


@main.command(name="regime")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@guarded
def cmd_regime(spec_path, out_dir):
    """Run a full experiment regime from a spec file and write the table."""
    cfg = parse_config_file(spec_path)
    table = run_regime_from_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "results.tsv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(table.to_tsv())
    write_manifest(out_dir, "regime", cfg, int(cfg.get("seed", 0)), [spec_path], [out_path])
    click.echo(out_path)


def run_regime_from_config(cfg: dict) -> ResultTable:
    """Build corpus, typology and configs from a flat config dict and run."""
    seed = int(cfg.get("seed", 0))
    split_seed = int(cfg.get("split_seed", seed))
    if "corpus_dir" in cfg:
        vocab, datasets = _load_corpus(cfg["corpus_dir"], split_seed)
        typ_path = cfg.get("typology")
        vectors = None
        n_feat = 0
        if typ_path:
            t = load_typology(typ_path)
            if not t.is_complete():
                raise ConfigError("typology table has missing values; impute it first")
            vectors = {lang: t.vector(lang) for lang in datasets}
            n_feat = t.n_features
    else:
        spec = _family_spec(cfg)
        raws, vectors, _ = synth.generate_synthetic_family(spec, int(cfg.get("family.seed", seed)))
        vocab = build_vocabulary(list(raws.values()))
        datasets = {
            lang: split_dataset(raw, vocab, seed=split_seed) for lang, raw in raws.items()
        }
        n_feat = spec.n_flags
    conditioning = cfg.get("conditioning", "bare")
    if conditioning == "bare":
        vectors_used = None
        n_feat_used = 0
    else:
        if vectors is None:
            raise ConfigError("conditioned regime needs a typology table")
        vectors_used, n_feat_used = vectors, n_feat
    partition_keys = sorted(
        (k for k in cfg if k.startswith("partition.")),
        key=lambda k: int(k.split(".", 1)[1]),
    )
    partitions = tuple(tuple(_comma_list(cfg[k]) or ()) for k in partition_keys)
    priors = tuple(_comma_list(cfg.get("priors", "ninf,univ")) or ())
    spec_obj = RegimeSpec(
        regime=cfg.get("regime", "zero_shot"),
        partitions=partitions,
        dev_languages_per_partition=int(cfg.get("dev_count", 5)),
        conditioning=conditioning,
        priors=priors,
        fewshot_n=int(cfg.get("fewshot_n", 100)),
    )
    arch = arch_from_config(cfg, vocab.size, conditioning, n_feat_used)
    tcfg = train_config_from(cfg, seed)
    ftcfg = train_config_from(cfg, seed, prefix="finetune")
    if "finetune.max_epochs" not in cfg:
        ftcfg = replace(ftcfg, max_epochs=FEWSHOT_EPOCHS)
    lambdas = {
        "univ": float(cfg.get("lambda.univ", 1e5)),
        "ninf": float(cfg.get("lambda.ninf", 1e-5)),
        "fitu": 0.0,
    }
    cfgs = RegimeConfigs(
        arch=arch, train=tcfg, finetune_train=ftcfg,
        sigma2=float(cfg.get("sigma2", 1.0)), lambdas=lambdas,
        fisher_max_per_language=int(cfg.get("fisher_max_per_lang", 0)),
    )
    return run_regime(spec_obj, datasets, vectors_used, cfgs)


@main.command(name="generate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--length", type=int, default=25, show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--lang", default=None)
@click.option("--typology", "typology_path", default=None, type=click.Path())
@click.option("--seed", type=int, default=default_seed)
@guarded
def cmd_generate(model_path, length, temperature, lang, typology_path, seed):
    """Sample text from a checkpointed model."""
    params, arch, vocab, _ = load_params(model_path)
    if arch.conditioning == "bare":
        cond = evaluation.conditioning_for("bare", None, "-")
    else:
        if not lang:
            raise ConfigError("conditioned models need --lang and --typology")
        vectors, _ = _conditioning_map(arch.conditioning, typology_path, [lang])
        cond = evaluation.conditioning_for(arch.conditioning, vectors, lang)
    click.echo(sample_text(params, arch, vocab, length, temperature, seed, cond))


@main.group(name="probe")
def cmd_probe():
    """Posterior probing utilities."""


@cmd_probe.command(name="snr")
@click.option("--posterior", "posterior_path", required=True, type=click.Path(exists=True))
@click.option("--bins", type=int, default=50, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@guarded
def cmd_probe_snr(posterior_path, bins, out_path):
    """Signal-to-noise ratio histogram of a posterior."""
    posterior, _, _ = laplace.load_posterior(posterior_path)
    values = laplace.snr(posterior)
    rows = laplace.snr_histogram(values, bins)
    lines = ["lo\thi\tcount"] + [f"{lo:.6e}\t{hi:.6e}\t{count}" for lo, hi, count in rows]
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    click.echo(
        f"# parameters={values.size} median_snr={np.median(values):.4g}", err=True
    )


@main.command(name="impute")
@click.option("--typology", "typology_path", required=True, type=click.Path(exists=True))
@click.option("--distances", "distances_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@guarded
def cmd_impute(typology_path, distances_path, k, out_path):
    """Fill missing typology cells by weighted k-nearest-neighbor average."""
    from .typology import impute_missing, load_distances

    table = load_typology(typology_path)
    distances = load_distances(distances_path, table.language_ids)
    complete = impute_missing(table, distances, k)
    save_typology(out_path, complete)
    click.echo(f"wrote {out_path}")


@main.group(name="analyze")
def cmd_analyze():
    """Dataset / result analyses."""


@cmd_analyze.command(name="chardist")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--results", "results_path", required=True, type=click.Path(exists=True))
@click.option("--split-seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@guarded
def cmd_analyze_chardist(corpus_dir, results_path, split_seed, out_path):
    """Correlate unigram-distribution exoticness with BPC results."""
    if not os.path.isdir(corpus_dir):
        raise DataError(f"corpus directory not found: {corpus_dir}")
    vocab, datasets = _load_corpus(corpus_dir, split_seed)
    scores: dict[str, list[float]] = {}
    with open(results_path, encoding="utf-8") as fh:
        header = fh.readline().strip().split("\t")
        try:
            li, bi = header.index("language"), header.index("bpc")
        except ValueError:
            raise DataError(f"{results_path} lacks language/bpc columns") from None
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            if cells[li] == "All":
                continue
            scores.setdefault(cells[li], []).append(float(cells[bi]))
    bpc_by_lang = {lang: float(np.mean(v)) for lang, v in scores.items()}
    unigrams = {
        lang: unigram_distribution(ds, vocab)
        for lang, ds in datasets.items()
        if lang in bpc_by_lang
    }
    distances, rho = char_distance_analysis(unigrams, bpc_by_lang)
    lines = ["language\tcosine_distance\tbpc"]
    for lang in sorted(distances):
        lines.append(f"{lang}\t{distances[lang]:.6f}\t{bpc_by_lang[lang]:.6f}")
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    click.echo(f"pearson_rho\t{rho:.6f}\tn\t{len(distances)}")


if __name__ == "__main__":
    main()
