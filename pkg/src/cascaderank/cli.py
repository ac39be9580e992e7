"""Command-line harness: build instances, run experiment matrices, plot."""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import environment, experiment, oracle, pipeline
from .core import expected_list_reward, topic_coverage


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-run progress.")
def main(verbose: bool):
    """Online learning-to-rank experiments under the cascade click model."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--ratings", "ratings_path", required=True, type=click.Path(exists=True), help="(user, item, rating) text file.")
@click.option("--topics", "topics_path", required=True, type=click.Path(exists=True), help="(item, topic) text file.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Bundle output directory.")
@click.option("--users", default=1000, show_default=True, help="Most active users to keep.")
@click.option("--items", default=1000, show_default=True, help="Most rated items to keep.")
@click.option("--topic-count", default=20, show_default=True, help="Topics with the most items to keep.")
@click.option("--rel-dim", default=10, show_default=True, help="Relevance feature dimension.")
@click.option("--split", default=0.5, show_default=True, help="Fraction of users used for feature estimation.")
@click.option("--seed", default=0, show_default=True)
@click.option("--drop-topic", multiple=True, help="Topic label to exclude (repeatable).")
def prepare(ratings_path, topics_path, out_dir, users, items, topic_count, rel_dim, split, seed, drop_topic):
    """Build an instance bundle from rating and topic files."""
    bundle = pipeline.build_instance(
        ratings_path,
        topics_path,
        n_users=users,
        n_items=items,
        n_topics=topic_count,
        rel_dim=rel_dim,
        split_fraction=split,
        seed=seed,
        drop_topics=tuple(drop_topic),
    )
    out = pipeline.save_bundle(bundle, out_dir)
    click.echo(f"bundle written to {out} ({len(bundle.catalog)} items, {bundle.n_users} users, d={bundle.catalog.d}, m={bundle.catalog.m})")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--items", default=200, show_default=True)
@click.option("--topics", default=10, show_default=True)
@click.option("--rel-dim", default=10, show_default=True)
@click.option("--users", default=100, show_default=True)
@click.option("--sparsity", default=0.12, show_default=True, help="Target positive rate of the planted ratings.")
def synth(out_dir, seed, items, topics, rel_dim, users, sparsity):
    """Generate a synthetic instance bundle with known ground truth."""
    bundle = pipeline.synthesize_instance(
        seed=seed, n_items=items, n_topics=topics, rel_dim=rel_dim, sparsity=sparsity, n_users=users
    )
    out = pipeline.save_bundle(bundle, out_dir)
    click.echo(f"bundle written to {out} ({len(bundle.catalog)} items, {bundle.n_users} users, d={bundle.catalog.d}, m={bundle.catalog.m})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="out", show_default=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Override master_seed from the config.")
@click.option("--jobs", default=1, show_default=True, help="Parallel worker processes.")
@click.option("--print-config", is_flag=True, help="Echo the fully resolved config and exit.")
def run(config_path, out_dir, seed, jobs, print_config):
    """Run the experiment matrix described by a config file."""
    config = experiment.load_config(config_path)
    if seed is not None:
        config = dataclasses.replace(config, master_seed=seed)
    if print_config:
        click.echo(config.to_text(), nl=False)
        return
    traces = experiment.run_experiment(config, out_dir=out_dir, jobs=jobs, progress=True)
    summary = experiment.aggregate(traces)
    experiment.write_summary_csv(summary, Path(out_dir) / "summary.csv")
    click.echo(f"{len(traces)} runs -> {out_dir}/traces.csv, {out_dir}/summary.csv")


@main.command()
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True), help="traces.csv or a runs/ directory.")
@click.option("--out", "out_dir", default="out", show_default=True, type=click.Path())
def aggregate(traces_path, out_dir):
    """Aggregate flushed per-run traces into a summary table."""
    traces = experiment.read_traces_csv(traces_path)
    if not traces:
        raise click.ClickException("no traces found")
    summary = experiment.aggregate(traces)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_summary_csv(summary, out / "summary.csv")
    click.echo(f"summary for {len(traces)} runs -> {out / 'summary.csv'}")


@main.command()
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="plots", show_default=True, type=click.Path())
def plot(summary_path, out_dir):
    """Render regret-curve SVGs from a summary table."""
    rows = experiment.read_summary_csv(summary_path)
    written = experiment.render_plots(rows, out_dir)
    click.echo(f"{len(written)} plots -> {out_dir}")


@main.command()
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(exists=True))
@click.option("--samples", default=100000, show_default=True, help="Click samples for the simulator checks.")
@click.option("--seed", default=0, show_default=True)
def validate(bundle_dir, samples, seed):
    """Property-test battery for an instance bundle."""
    failures = _validate_bundle(pipeline.load_bundle(bundle_dir), samples, seed, click.echo)
    if failures:
        raise click.ClickException(f"{failures} checks failed")
    click.echo("all checks passed")


def _validate_bundle(bundle, samples, seed, echo) -> int:
    catalog = bundle.catalog
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A]))
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        if ok:
            echo(f"ok   {name}{(' - ' + detail) if detail else ''}")
        else:
            failures += 1
            echo(f"FAIL {name}{(' - ' + detail) if detail else ''}")

    topics = catalog.topics
    check("topic entries in [0, 1]", bool(topics.size == 0 or (topics.min() >= 0 and topics.max() <= 1)))
    z_norms = np.linalg.norm(catalog.relevance, axis=1)
    check("item relevance features unit norm", bool(np.abs(z_norms - 1).max() < 1e-9))
    theta = np.array([u.topic_prefs for u in bundle.users])
    beta = np.array([u.rel_prefs for u in bundle.users])
    check("topic preferences on the simplex", bool((theta >= -1e-12).all() and np.abs(theta.sum(axis=1) - 1).max() < 1e-9))
    check("user relevance preferences unit norm", bool(np.abs(np.linalg.norm(beta, axis=1) - 1).max() < 1e-9))

    scores = catalog.relevance @ beta.T
    n_bad = int(np.sum((scores < -1e-12) | (scores > 1 + 1e-12)))
    check("relevance scores within [0, 1]", n_bad == 0, f"{n_bad} violations")

    # coverage monotonicity / diminishing gains on random item pairs
    ok_mono = ok_dim = True
    for _ in range(200):
        pick = rng.choice(len(catalog), size=min(3, len(catalog)), replace=False)
        small = topic_coverage([catalog[int(pick[0])]])
        big = topic_coverage([catalog[int(i)] for i in pick])
        ok_mono &= bool((big >= small - 1e-12).all())
        gain_small = topic_coverage([catalog[int(pick[-1])], catalog[int(pick[0])]]) - topic_coverage([catalog[int(pick[0])]])
        gain_big = big - topic_coverage([catalog[int(i)] for i in pick[:-1]])
        ok_dim &= bool((gain_big <= gain_small + 1e-12).all())
    check("coverage monotone", ok_mono)
    check("coverage gains diminishing", ok_dim)

    # cascade sampler vs analytic distribution on a representative list
    from scipy import stats

    k = min(10, len(catalog))
    user = bundle.user(0, 0.5)
    ranked = oracle.greedy_benchmark(user, catalog, k)
    alpha = environment.attraction_vector(user, ranked, catalog)
    counts = np.zeros(k + 1, dtype=np.int64)
    for _ in range(samples):
        counts[environment.sample_click(alpha, rng).click_pos - 1] += 1
    probs = np.empty(k + 1)
    stay = 1.0
    for i, p in enumerate(alpha.probs):
        probs[i] = stay * p
        stay *= 1.0 - p
    probs[k] = stay
    observed, expected = _merge_small_cells(counts, probs * samples)
    if observed.size >= 2:
        chi = stats.chisquare(observed, expected)
        check("cascade sampler matches analytic distribution", bool(chi.pvalue > 0.001), f"p={chi.pvalue:.4f}")
    click_rate = counts[:k].sum() / samples
    expect = expected_list_reward(alpha)
    sigma = np.sqrt(max(expect * (1 - expect), 1e-12) / samples)
    check("click rate matches expected reward", bool(abs(click_rate - expect) <= 3 * sigma + 1e-9),
          f"{click_rate:.4f} vs {expect:.4f}")

    # determinism of a short run
    from .experiment import simulate_run

    t1 = simulate_run(bundle, "hybrid", 0.5, k, 0, 0, 200, 50, 1.0, seed)
    t2 = simulate_run(bundle, "hybrid", 0.5, k, 0, 0, 200, 50, 1.0, seed)
    check("short run deterministic", bool(np.array_equal(t1.cum_regret, t2.cum_regret)))
    return failures


def _merge_small_cells(counts, expected, floor: float = 5.0):
    """Pool cells with tiny expectation so the chi-squared approximation holds."""
    big = expected >= floor
    observed = list(counts[big])
    expect = list(expected[big])
    rest_obs = counts[~big].sum()
    rest_exp = expected[~big].sum()
    if rest_exp > 0:
        observed.append(rest_obs)
        expect.append(rest_exp)
    return np.asarray(observed, dtype=np.float64), np.asarray(expect)


if __name__ == "__main__":
    main()
