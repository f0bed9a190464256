"""Command-line interface.

Subcommands cover the attribute pipeline, pattern training and evaluation,
study grids, report rendering (tables plus matplotlib figures), embedding
export and the separability checker.
"""

from __future__ import annotations

import json
import os

import click

from . import harness
from .attributes import (
    FixtureClient,
    GenerationSettings,
    generate_bank,
    load_bank,
    precompute_embeddings,
    save_bank,
)
from .encoders import load_backend
from .reprogram import load_pattern, save_pattern
from .separability import LemmaCheckConfig, lemma_check
from .training import TrainConfig, evaluate, train


def _backend_from_options(backend, seed, input_hw, embed_dim, temperature):
    return load_backend(
        {
            "backend": backend,
            "seed": seed,
            "input_shape": (3, input_hw, input_hw),
            "embed_dim": embed_dim,
            "temperature": temperature,
        }
    )


backend_options = [
    click.option("--backend", default="toy", show_default=True,
                 type=click.Choice(["toy", "external"])),
    click.option("--backend-seed", default=0, show_default=True, type=int),
    click.option("--input-hw", default=24, show_default=True, type=int,
                 help="Backend input height/width (toy backend)."),
    click.option("--embed-dim", default=64, show_default=True, type=int),
    click.option("--temperature", default=0.01, show_default=True, type=float),
]


def with_backend_options(fn):
    for opt in reversed(backend_options):
        fn = opt(fn)
    return fn


def _load_dataset(manifest, shapes7_per_class, shapes7_seed):
    if manifest:
        return harness.load_manifest(manifest)
    samples, classes = harness.make_shapes7(shapes7_per_class, seed=shapes7_seed)
    return samples, classes


@click.group()
def main():
    """Attribute-guided visual reprogramming toolkit."""


@main.command("generate-attrs")
@click.option("--task-info", required=True)
@click.option("--classes-file", required=True, type=click.Path(exists=True),
              help="Text file with one class name per line.")
@click.option("--out", required=True, type=click.Path())
@click.option("--fixture", type=click.Path(exists=True),
              help="JSON file of recorded prompt -> candidates responses.")
@click.option("--m", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def generate_attrs(task_info, classes_file, out, fixture, m, seed):
    """Generate a per-class attribute bank and write it as JSON."""
    with open(classes_file, encoding="utf-8") as fh:
        classes = [line.strip() for line in fh if line.strip()]
    settings = GenerationSettings(m=m, seed=seed)
    if fixture:
        client = FixtureClient.from_file(fixture)
    else:
        raise click.UsageError(
            "no live text-generation client is configured; pass --fixture "
            "(set ATTRVR_API_KEY and supply a client for live generation)"
        )
    bank = generate_bank(classes, task_info, settings, client)
    save_bank(bank, out)
    click.echo(f"wrote bank with {len(classes)} classes, m={m} to {out}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Flat TOML run config mirroring TrainConfig.")
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--manifest", type=click.Path(exists=True))
@click.option("--shapes7-per-class", default=48, show_default=True, type=int)
@click.option("--shapes7-seed", default=0, show_default=True, type=int)
@click.option("--shots", default=16, show_default=True, type=int)
@with_backend_options
def train_cmd(config_path, bank_path, out_dir, manifest, shapes7_per_class,
              shapes7_seed, shots, backend, backend_seed, input_hw, embed_dim,
              temperature):
    """Train a pattern and write checkpoint + per-epoch history."""
    cfg = TrainConfig.from_toml(config_path)
    be = _backend_from_options(backend, backend_seed, input_hw, embed_dim, temperature)
    samples, _classes = _load_dataset(manifest, shapes7_per_class, shapes7_seed)
    bank = precompute_embeddings(load_bank(bank_path), be)
    split = harness.make_splits(samples, shots, seed=cfg.seed)
    pattern, record = train(split, bank, cfg, be)
    os.makedirs(out_dir, exist_ok=True)
    save_pattern(pattern, os.path.join(out_dir, "pattern.bin"), cfg.config_hash())
    record.save(
        os.path.join(out_dir, "history.jsonl"), os.path.join(out_dir, "summary.json")
    )
    if record.trace is not None:
        record.trace.to_jsonl(os.path.join(out_dir, "selections.jsonl"))
    acc, _per_class = evaluate(pattern, split, "attrvr" if cfg.method == "attrvr" else "label",
                               bank, be, cfg)
    click.echo(f"final test accuracy: {acc:.4f}")


@main.command("eval")
@click.option("--pattern", "pattern_path", required=True, type=click.Path(exists=True))
@click.option("--scorer", required=True, type=click.Choice(["attrvr", "label"]))
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", type=click.Path(exists=True))
@click.option("--shapes7-per-class", default=48, show_default=True, type=int)
@click.option("--shapes7-seed", default=0, show_default=True, type=int)
@click.option("--shots", default=16, show_default=True, type=int)
@click.option("--split-seed", default=0, show_default=True, type=int)
@click.option("--apply-mode", default="pad", show_default=True,
              type=click.Choice(["pad", "overlay"]))
@with_backend_options
def eval_cmd(pattern_path, scorer, bank_path, manifest, shapes7_per_class,
             shapes7_seed, shots, split_seed, apply_mode, backend, backend_seed,
             input_hw, embed_dim, temperature):
    """Evaluate a trained pattern under a chosen scorer."""
    be = _backend_from_options(backend, backend_seed, input_hw, embed_dim, temperature)
    pattern, _hash = load_pattern(pattern_path)
    samples, _classes = _load_dataset(manifest, shapes7_per_class, shapes7_seed)
    bank = precompute_embeddings(load_bank(bank_path), be)
    split = harness.make_splits(samples, shots, seed=split_seed)
    acc, per_class = evaluate(pattern, split, scorer, bank, be, apply_mode=apply_mode)
    click.echo(json.dumps({"accuracy": acc, "per_class": per_class}, indent=2))


@main.command("study")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--manifest", type=click.Path(exists=True))
@click.option("--shapes7-per-class", default=48, show_default=True, type=int)
@click.option("--shapes7-seed", default=0, show_default=True, type=int)
@click.option("--shots", default=16, show_default=True, type=int)
@with_backend_options
def study_cmd(spec_path, config_path, bank_path, out_dir, manifest,
              shapes7_per_class, shapes7_seed, shots, backend, backend_seed,
              input_hw, embed_dim, temperature):
    """Run a study grid, appending rows to a resumable results store."""
    spec = harness.StudySpec.from_toml(spec_path)
    base = TrainConfig.from_toml(config_path) if config_path else TrainConfig()
    be = _backend_from_options(backend, backend_seed, input_hw, embed_dim, temperature)
    samples, _classes = _load_dataset(manifest, shapes7_per_class, shapes7_seed)
    bank = precompute_embeddings(load_bank(bank_path), be)
    rows = harness.run_study(spec, base, bank, be, samples, out_dir, n_shots=shots)
    ok = sum(1 for r in rows if r.get("status") == "ok")
    click.echo(f"{ok}/{len(rows)} rows ok in {os.path.join(out_dir, 'results.jsonl')}")


@main.command("report")
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="md", show_default=True,
              type=click.Choice(["md", "csv"]))
@click.option("--out", "out_dir", default=None, type=click.Path())
def report_cmd(results_dir, fmt, out_dir):
    """Render the summary table and per-study accuracy figures."""
    results_path = os.path.join(results_dir, "results.jsonl")
    if not os.path.exists(results_path):
        raise click.UsageError(f"no results.jsonl under {results_dir}")
    out = out_dir or results_dir
    table, figures = harness.write_report(results_path, out, fmt)
    click.echo(f"table: {table}")
    for f in figures:
        click.echo(f"figure: {f}")


@main.command("export-embeddings")
@click.option("--pattern", "pattern_path", required=True, type=click.Path(exists=True))
@click.option("--out-prefix", required=True, type=click.Path())
@click.option("--manifest", type=click.Path(exists=True))
@click.option("--shapes7-per-class", default=48, show_default=True, type=int)
@click.option("--shapes7-seed", default=0, show_default=True, type=int)
@click.option("--shots", default=16, show_default=True, type=int)
@click.option("--split-seed", default=0, show_default=True, type=int)
@with_backend_options
def export_cmd(pattern_path, out_prefix, manifest, shapes7_per_class, shapes7_seed,
               shots, split_seed, backend, backend_seed, input_hw, embed_dim,
               temperature):
    """Export test-split embeddings under a trained pattern."""
    be = _backend_from_options(backend, backend_seed, input_hw, embed_dim, temperature)
    pattern, _hash = load_pattern(pattern_path)
    samples, _classes = _load_dataset(manifest, shapes7_per_class, shapes7_seed)
    split = harness.make_splits(samples, shots, seed=split_seed)
    mat, labels = harness.export_embeddings(pattern, split, be, out_prefix)
    click.echo(f"exported {mat.shape[0]} embeddings of dim {mat.shape[1]}")


@main.command("lemma-check")
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--n-classes", default=5, show_default=True, type=int)
@click.option("--samples-per-class", default=40, show_default=True, type=int)
@click.option("--dim", default=64, show_default=True, type=int)
@click.option("--n-dist-attrs", default=12, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def lemma_cmd(out_path, n_classes, samples_per_class, dim, n_dist_attrs, seed):
    """Empirically check the separability inequalities on synthetic sets."""
    cfg = LemmaCheckConfig(
        n_classes=n_classes,
        samples_per_class=samples_per_class,
        dim=dim,
        n_dist_attrs=n_dist_attrs,
        seed=seed,
    )
    report = lemma_check(cfg, out_path)
    click.echo(json.dumps(report["checks"], indent=2))


if __name__ == "__main__":
    main()
