#!/usr/bin/env python3
"""prunekit - dataset pruning by training-dynamics importance scores"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import click
import pydantic
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from tabulate import tabulate

from . import __version__
from .analysis.distribution import compare_to_truth, pruned_set_agreement, score_histogram, write_histogram
from .analysis.spectral import print_report, spectral_report
from .errors import PrunekitError, PrunekitIOError, ValidationError
from .extrapolation.grid_search import grid_search, load_grid_spec
from .extrapolation.knn import extrapolate_scores
from .models.formats import (
    check_output_path, read_embeddings, read_labels, read_manifest, read_scores, read_traces,
    write_embeddings, write_manifest, write_scores, write_traces,
)
from .models.records import Direction, DistanceMetric, KnnConfig, Metric, Variant
from .pruning.pruner import class_counts, overlap, prune_balanced, prune_by_score, prune_random
from .scoring.dynamic_uncertainty import DuConfig, score_traces_du
from .scoring.frequency import Aggregation, FpConfig, score_traces_fp
from .toytrain.attack import AttackConfig
from .toytrain.data import make_blobs
from .toytrain.experiment import embed_dataset
from .toytrain.losses import LossKind
from .toytrain.model import ToyModel
from .toytrain.trainer import TrainConfig, evaluate, train
from .utils.config import EXTRAPOLATION_PRESETS, Config

console = Console(stderr=True)
logger = logging.getLogger(__name__)

EXIT_VALIDATION = 1
EXIT_IO = 2


def setup_logging(verbose: bool = False):
    """Setup logging configuration"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def config_digest(command: str, params: Dict[str, Any]) -> str:
    canonical = json.dumps({"command": command, "params": params}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def print_header(command: str, params: Dict[str, Any], seed: Optional[int] = None) -> str:
    """Reproducibility header on stderr; returns the config digest"""
    digest = config_digest(command, params)
    args = json.dumps(params, sort_keys=True, separators=(",", ":"))
    console.print(
        f"prunekit {__version__} command={command} seed={seed} digest={digest} args={args}",
        markup=False, highlight=False, soft_wrap=True,
    )
    return digest


class PrunekitGroup(click.Group):
    """Maps library errors onto exit codes: 1 for invalid input, 2 for I/O"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (ValidationError, pydantic.ValidationError) as e:
            console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False, soft_wrap=True)
            ctx.exit(EXIT_VALIDATION)
        except OSError as e:
            console.print(f"[red]I/O error:[/red] {escape(str(e))}", highlight=False, soft_wrap=True)
            ctx.exit(EXIT_IO)
        except PrunekitError as e:
            console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False, soft_wrap=True)
            ctx.exit(EXIT_VALIDATION)


INPUT = click.Path(exists=True, dir_okay=False)


def output_option(f):
    f = click.option('--force', is_flag=True, help='Overwrite existing output files')(f)
    return click.option('--output', '-o', required=True, type=click.Path(dir_okay=False),
                        help='Output file')(f)


@click.group(cls=PrunekitGroup)
@click.version_option(__version__, prog_name="prunekit")
@click.option('--config', '-c', type=click.Path(exists=True, dir_okay=False), help='Configuration file path')
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging')
@click.pass_context
def cli(ctx, config, verbose):
    """Score, extrapolate and prune training data by its training dynamics"""
    ctx.ensure_object(dict)
    try:
        ctx.obj['config'] = Config.load(config)
    except (ValueError, TypeError) as e:
        raise ValidationError(f"invalid config file {config}: {e}") from e
    setup_logging(verbose or ctx.obj['config'].runtime.verbose)


# Simulation

@cli.command()
@click.option('--output', '-o', required=True, type=click.Path(),
              help='Output prefix; writes <prefix>.<variant>.traces.jsonl and <prefix>.log.json')
@click.option('--force', is_flag=True, help='Overwrite existing output files')
@click.option('--seed', default=0, show_default=True, help='Data, initialization and shuffling seed')
@click.option('--n-per-class', type=int, help='Samples per class')
@click.option('--classes', 'n_classes', type=int, help='Number of classes')
@click.option('--dim', type=int, help='Input dimension')
@click.option('--separation', type=float, help='Distance between paired class centres, in standard deviations')
@click.option('--spread', type=float, help='Cluster standard deviation')
@click.option('--hidden', help='Hidden layer widths, comma separated (empty for a linear model)')
@click.option('--epochs', type=int, help='Training epochs K')
@click.option('--batch-size', type=int)
@click.option('--lr', 'learning_rate', type=float, help='Learning rate')
@click.option('--momentum', type=float)
@click.option('--loss', type=click.Choice([k.value for k in LossKind]), default=LossKind.STANDARD_CE.value,
              show_default=True)
@click.option('--beta', 'trades_beta', type=float, help='TRADES KL weight')
@click.option('--label-smoothing', type=float)
@click.option('--attack', 'attack_preset', type=click.Choice(['linf', 'l2']), default='linf', show_default=True,
              help='Attack preset')
@click.option('--epsilon', type=float, help='Override the preset budget')
@click.option('--step-size', type=float, help='Override the preset step size')
@click.option('--iterations', type=int, help='Override the preset iteration count')
@click.option('--random-start', is_flag=True, help='Start attacks at a random point in the budget ball')
@click.option('--record', multiple=True, type=click.Choice([v.value for v in Variant]),
              help='Trace variants to record (default: clean, plus adversarial for adversarial losses)')
@click.option('--reuse-train-perturbation', is_flag=True,
              help='Record adversarial certainty on the last training perturbation instead of a fresh attack')
@click.option('--manifest', type=INPUT, help='Train only on the kept ids of this manifest')
@click.option('--embeddings', 'write_emb', is_flag=True,
              help='Also write <prefix>.inputs.emb and <prefix>.penultimate.emb')
@click.pass_context
def simulate(ctx, output, force, seed, n_per_class, n_classes, dim, separation, spread, hidden, epochs,
             batch_size, learning_rate, momentum, loss, trades_beta, label_smoothing, attack_preset, epsilon,
             step_size, iterations, random_start, record, reuse_train_perturbation, manifest, write_emb):
    """Generate blob data, train the toy classifier and emit certainty traces"""
    defaults = ctx.obj['config'].training

    def pick(value, default):
        return default if value is None else value

    widths = list(defaults.hidden) if hidden is None else [int(w) for w in hidden.split(',') if w.strip()]
    loss_kind = LossKind(loss)
    variants = list(record) or (
        [Variant.CLEAN.value] if loss_kind == LossKind.STANDARD_CE
        else [Variant.CLEAN.value, Variant.ADVERSARIAL.value]
    )
    overrides = {k: v for k, v in (('epsilon', epsilon), ('step_size', step_size), ('iterations', iterations))
                 if v is not None}
    attack = AttackConfig.from_preset(attack_preset, random_start=random_start, **overrides)
    data_params = {
        'n_per_class': pick(n_per_class, defaults.n_per_class),
        'n_classes': pick(n_classes, defaults.n_classes),
        'dim': pick(dim, defaults.dim),
        'separation': pick(separation, defaults.separation),
        'spread': pick(spread, defaults.spread),
    }
    train_cfg = TrainConfig(
        epochs=pick(epochs, defaults.epochs),
        batch_size=pick(batch_size, defaults.batch_size),
        learning_rate=pick(learning_rate, defaults.learning_rate),
        momentum=pick(momentum, defaults.momentum),
        loss=loss_kind,
        trades_beta=pick(trades_beta, defaults.trades_beta),
        label_smoothing=pick(label_smoothing, defaults.label_smoothing),
        seed=seed,
        record_variants=tuple(Variant(v) for v in variants),
        reuse_train_perturbation=reuse_train_perturbation,
    )

    prefix = str(output)
    outputs = {v: f"{prefix}.{v}.traces.jsonl" for v in variants}
    outputs['log'] = f"{prefix}.log.json"
    if write_emb:
        outputs['inputs'] = f"{prefix}.inputs.emb"
        outputs['penultimate'] = f"{prefix}.penultimate.emb"
    paths = {name: check_output_path(path, force) for name, path in outputs.items()}

    print_header('simulate', {
        'data': data_params,
        'hidden': widths,
        'train': train_cfg.model_dump(mode='json'),
        'attack': attack.model_dump(mode='json'),
        'manifest': manifest,
        'output': prefix,
    }, seed)

    dataset = make_blobs(seed=seed, **data_params)
    keep_ids = read_manifest(manifest).kept if manifest else None
    model = ToyModel.initialize([dataset.dim, *widths, dataset.n_classes], seed)
    result = train(model, dataset, train_cfg, attack, keep_ids=keep_ids)

    for variant, traces in result.traces.items():
        write_traces(traces, paths[variant.value])
    result.write_log(paths['log'])
    if write_emb:
        write_embeddings(dataset.to_embeddings(), paths['inputs'])
        write_embeddings(embed_dataset(result.model, dataset), paths['penultimate'])

    clean, robust = evaluate(result.model, dataset, attack, seed)
    click.echo(tabulate(
        [[len(keep_ids) if keep_ids is not None else len(dataset), train_cfg.epochs, clean, robust]],
        headers=['Trained on', 'Epochs', 'Clean acc', 'Robust acc'], tablefmt='grid', floatfmt='.4f',
    ))


# Scoring

@cli.command()
@click.argument('traces', type=INPUT)
@output_option
@click.option('--metric', type=click.Choice(['du', 'fp'], case_sensitive=False), default='du', show_default=True)
@click.option('--window', '-J', type=int, help='DU window size')
@click.option('--paper-denominator', '--short-denominator', 'short_denominator', is_flag=True,
              help='Divide DU by K - J instead of K - J + 1')
@click.option('--lo', 'fp_lo', type=int, help='First FP bin')
@click.option('--hi', 'fp_hi', type=int, help='Last FP bin (default floor(K/2))')
@click.option('--aggregation', type=click.Choice([a.value for a in Aggregation]), help='FP bin aggregation')
@click.pass_context
def score(ctx, traces, output, force, metric, window, short_denominator, fp_lo, fp_hi, aggregation):
    """Compute DU or FP scores from a trace file"""
    defaults = ctx.obj['config'].scoring
    path = check_output_path(output, force)
    metric = Metric(metric.upper())
    if metric == Metric.DU:
        cfg = DuConfig(
            window=window if window is not None else defaults.window,
            short_denominator=short_denominator or defaults.short_denominator,
        )
    else:
        cfg = FpConfig(
            lo=fp_lo if fp_lo is not None else defaults.fp_lo,
            hi=fp_hi if fp_hi is not None else defaults.fp_hi,
            aggregation=aggregation or defaults.fp_aggregation,
        )
    print_header('score', {'traces': traces, 'metric': metric.value, **cfg.model_dump(mode='json'),
                           'output': output})

    loaded = read_traces(traces)
    table = score_traces_du(loaded.traces, cfg) if metric == Metric.DU else score_traces_fp(loaded.traces, cfg)
    write_scores(table, path)


# Extrapolation

@cli.command()
@click.argument('source_embeddings', type=INPUT)
@click.argument('source_scores', type=INPUT)
@click.argument('dest_embeddings', type=INPUT)
@output_option
@click.option('--preset', type=click.Choice(sorted(EXTRAPOLATION_PRESETS)), help='Named (k, metric) setting')
@click.option('--k', type=int, help='Number of neighbours')
@click.option('--metric', type=click.Choice([m.value for m in DistanceMetric]), help='Distance metric')
@click.pass_context
def extrapolate(ctx, source_embeddings, source_scores, dest_embeddings, output, force, preset, k, metric):
    """Assign destination samples the mean score of their k nearest scored neighbours"""
    config = ctx.obj['config']
    settings = {'k': config.extrapolation.k, 'metric': config.extrapolation.metric}
    if preset:
        settings.update(EXTRAPOLATION_PRESETS[preset])
    if k is not None:
        settings['k'] = k
    if metric is not None:
        settings['metric'] = metric
    cfg = KnnConfig(**settings)
    path = check_output_path(output, force)
    print_header('extrapolate', {
        'source_embeddings': source_embeddings, 'source_scores': source_scores,
        'dest_embeddings': dest_embeddings, 'k': cfg.k, 'metric': cfg.metric.value, 'output': output,
    })

    table = extrapolate_scores(
        read_embeddings(source_embeddings), read_scores(source_scores), read_embeddings(dest_embeddings),
        cfg, threads=config.runtime.threads, batch_size=config.extrapolation.batch_size,
    )
    write_scores(table, path)


@cli.command()
@click.argument('spec_file', type=INPUT)
@output_option
@click.option('--k', 'k_values', type=int, multiple=True, help='k values (repeatable; overrides the spec file)')
@click.option('--metric', 'metrics', multiple=True, type=click.Choice([m.value for m in DistanceMetric]),
              help='Distance metrics (repeatable; overrides the spec file)')
@click.option('--holdout-fraction', type=float, help='Split the holdout from the first source variant')
@click.option('--holdout-seed', type=int, help='Holdout split seed')
@click.pass_context
def gridsearch(ctx, spec_file, output, force, k_values, metrics, holdout_fraction, holdout_seed):
    """MAE of every (source variant, metric, k) cell against a holdout"""
    config = ctx.obj['config']
    path = check_output_path(output, force)
    seed = config.extrapolation.holdout_seed if holdout_seed is None else holdout_seed
    print_header('gridsearch', {
        'spec': spec_file, 'k': list(k_values), 'metric': list(metrics),
        'holdout_fraction': holdout_fraction, 'holdout_seed': seed, 'output': output,
    }, seed)

    spec, holdout_emb, holdout_truth = load_grid_spec(
        spec_file,
        k_values=list(k_values) or None,
        metrics=list(metrics) or None,
        holdout_fraction=holdout_fraction,
        holdout_seed=seed,
        mismatch_ratio=config.extrapolation.scale_mismatch_ratio,
        default_holdout_fraction=config.extrapolation.holdout_fraction,
    )
    result = grid_search(
        spec, holdout_emb, holdout_truth,
        threads=config.runtime.threads, batch_size=config.extrapolation.batch_size,
    )
    result.write_csv(path)
    result.print()


# Pruning

@cli.command()
@click.argument('scores', type=INPUT)
@output_option
@click.option('--fraction', type=float, help='Fraction of samples to remove')
@click.option('--count', type=int, help='Exact number of samples to remove')
@click.option('--balanced', is_flag=True, help='Prune within each class')
@click.option('--direction', type=click.Choice([d.value for d in Direction]), help='Which scores survive')
@click.option('--random', 'random_', is_flag=True, help='Random pruning baseline over the scored ids')
@click.option('--seed', type=int, help='Random pruning seed')
@click.option('--labels', type=INPUT, help='Embedding or trace file providing class labels')
@click.pass_context
def prune(ctx, scores, output, force, fraction, count, balanced, direction, random_, seed, labels):
    """Write a kept/removed manifest from a score file"""
    defaults = ctx.obj['config'].pruning
    if fraction is not None and count is not None:
        raise click.UsageError('--fraction and --count are mutually exclusive')
    if fraction is None and count is None:
        fraction = defaults.fraction
    balanced = balanced or defaults.balanced
    direction = Direction(direction or defaults.direction)
    seed = defaults.seed if seed is None else seed
    if balanced and not labels:
        raise click.UsageError('--balanced needs --labels')
    path = check_output_path(output, force)
    print_header('prune', {
        'scores': scores, 'fraction': fraction, 'count': count, 'balanced': balanced,
        'direction': direction.value, 'random': random_, 'seed': seed if random_ else None,
        'labels': labels, 'output': output,
    }, seed if random_ else None)

    table = read_scores(scores)
    label_map = read_labels(labels) if labels else None
    if random_:
        manifest = prune_random(table.ids, fraction=fraction, seed=seed, labels=label_map,
                                balanced=balanced, count=count)
    elif balanced:
        manifest = prune_balanced(table, label_map, fraction=fraction, direction=direction, count=count)
    else:
        manifest = prune_by_score(table, fraction=fraction, direction=direction, count=count)
    write_manifest(manifest, path)

    if label_map:
        rows = [[c, kept, removed] for c, (kept, removed) in class_counts(manifest, label_map).items()]
        click.echo(tabulate(rows, headers=['Class', 'Kept', 'Removed'], tablefmt='grid'))
    else:
        click.echo(f"kept {len(manifest.kept)}, removed {len(manifest.removed)}")


# Analysis

@cli.group()
def analyze():
    """Spectral, overlap and score-distribution analyses"""


@analyze.command()
@click.argument('traces', type=INPUT)
@click.argument('du_scores', type=INPUT)
@output_option
@click.option('--footer', type=click.Path(dir_okay=False), help='Correlation JSON (default <output>.footer.json)')
@click.option('--band-low', nargs=2, type=int, help='Low band bins LO HI')
@click.option('--band-high', nargs=2, type=int, help='High band bins LO HI')
@click.option('--aggregation', type=click.Choice([a.value for a in Aggregation]), help='Band aggregation')
@click.pass_context
def spectral(ctx, traces, du_scores, output, force, footer, band_low, band_high, aggregation):
    """Correlate low/high-band DFT magnitude of traces with their DU scores"""
    defaults = ctx.obj['config'].scoring
    band_low = tuple(band_low) if band_low else tuple(defaults.band_low)
    band_high = tuple(band_high) if band_high else tuple(defaults.band_high)
    aggregation = Aggregation(aggregation or defaults.band_aggregation)
    footer = footer or f"{output}.footer.json"
    csv_path = check_output_path(output, force)
    footer_path = check_output_path(footer, force)
    print_header('analyze spectral', {
        'traces': traces, 'du_scores': du_scores, 'band_low': list(band_low), 'band_high': list(band_high),
        'aggregation': aggregation.value, 'output': output, 'footer': footer,
    })

    report = spectral_report(read_traces(traces).traces, read_scores(du_scores), band_low, band_high, aggregation)
    report.write(csv_path, footer_path)
    print_report(report)


@analyze.command('overlap')
@click.argument('manifest_a', type=INPUT)
@click.argument('manifest_b', type=INPUT)
@output_option
def overlap_cmd(manifest_a, manifest_b, output, force):
    """Share of removed samples two equal-size manifests have in common"""
    path = check_output_path(output, force)
    print_header('analyze overlap', {'a': manifest_a, 'b': manifest_b, 'output': output})

    a, b = read_manifest(manifest_a), read_manifest(manifest_b)
    value = overlap(a, b)
    record = {'a': manifest_a, 'b': manifest_b, 'removed': len(a.removed), 'overlap': value}
    _write_json(record, path)
    click.echo(f"{value:.6f}")


@analyze.command()
@click.argument('scores', type=INPUT)
@output_option
@click.option('--bins', default=20, show_default=True, help='Number of equal-width bins')
@click.option('--range', 'value_range', nargs=2, type=float, help='Histogram range LO HI')
def histogram(scores, output, force, bins, value_range):
    """Score distribution as CSV bin_lo,bin_hi,count"""
    path = check_output_path(output, force)
    print_header('analyze histogram', {
        'scores': scores, 'bins': bins, 'range': list(value_range) if value_range else None, 'output': output,
    })
    frame = score_histogram(read_scores(scores), bins, tuple(value_range) if value_range else None)
    write_histogram(frame, path)
    click.echo(tabulate(frame, headers='keys', tablefmt='simple', showindex=False, floatfmt='.4f'))


@analyze.command()
@click.argument('predicted', type=INPUT)
@click.argument('truth', type=INPUT)
@output_option
@click.option('--fraction', 'fractions', type=float, multiple=True, help='Pruning fractions (default 0.25, 0.5)')
@click.option('--direction', type=click.Choice([d.value for d in Direction]), default=Direction.KEEP_HIGH.value,
              show_default=True)
def compare(predicted, truth, output, force, fractions, direction):
    """Compare extrapolated scores with ground truth on the same ids"""
    path = check_output_path(output, force)
    fractions = list(fractions) or [0.25, 0.5]
    print_header('analyze compare', {
        'predicted': predicted, 'truth': truth, 'fractions': fractions, 'direction': direction, 'output': output,
    })

    pred_table, truth_table = read_scores(predicted), read_scores(truth)
    comparison = compare_to_truth(pred_table, truth_table)
    agreement = pruned_set_agreement(pred_table, truth_table, fractions, Direction(direction))
    record = {
        **comparison.to_dict(),
        'pruned_overlap': [{'fraction': f, 'overlap': o} for f, o in agreement],
    }
    _write_json(record, path)
    click.echo(tabulate(
        [[k, v] for k, v in comparison.to_dict().items()] + [[f"overlap@{f}", o] for f, o in agreement],
        tablefmt='simple', floatfmt='.6f',
    ))


def _write_json(record: Dict[str, Any], path: Path) -> None:
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(record, f, indent=2, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise PrunekitIOError(f"cannot write {path}: {e}") from e


def main(argv: Optional[Sequence[str]] = None):
    """Console script entry point"""
    cli.main(args=list(argv) if argv is not None else None, prog_name='prunekit')


if __name__ == "__main__":
    main()
