"""Command-line surface: index, retrieve, eval, inspect, gen-fixtures.

Option precedence is flags > config file > defaults; the resolved config is
echoed into the output directory for provenance. Exit codes: 0 success,
1 validation error, 2 I/O error.
"""
from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .bundles import GalleryIndex, TextBundle, VisualBundle
from .errors import BundleError, CalibrankError
from .fixtures import Scenario, ScenarioSpec, generate_scenario, write_scenario
from .heatmaps import export_text_inspection, export_visual_inspection
from .io import iter_bundle_dirs, load_bundle, load_gallery_index, save_gallery_index
from .rerank import FusionConfig, RankingResult, evaluate, fuse_and_rank
from .textual import TEXT_THRESHOLD_STRATEGIES, calibrate_query
from .visual import VIS_THRESHOLD_STRATEGIES, RectifierConfig, calibrate_image

DEFAULTS = {
    "eta": 0.1,
    "lambda": 0.5,
    "topk": 100,
    "epsilon": 1e-6,
    "vis_threshold": "mean",
    "text_threshold": "mean",
    "disable_cve": False,
    "disable_dcc": False,
    "skip_bad": False,
    "threads": 1,
    "seed": 0,
}


def resolve_config(config_path: str | None, **flags) -> dict:
    resolved = dict(DEFAULTS)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            raise CalibrankError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_values)
    resolved.update({k: v for k, v in flags.items() if v is not None})
    return resolved


def echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_option(fn):
    return click.option("--config", type=click.Path(exists=True), default=None)(fn)


@click.group()
def cli() -> None:
    """Training-free dominant-token calibration and re-ranking."""


@cli.command("gen-fixtures")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--n-items", type=int, default=50, show_default=True)
@click.option("--n-spiked", type=int, default=10, show_default=True)
def cmd_gen_fixtures(out, seed, n_items, n_spiked) -> None:
    """Write a seeded synthetic gallery, query set and relevance file."""
    spec = ScenarioSpec(
        n_items=n_items, n_spiked=n_spiked, seed=seed if seed is not None else 0
    )
    scenario = generate_scenario(spec)
    write_scenario(scenario, out)
    click.echo(
        f"wrote {n_items} gallery bundles ({n_spiked} spiked) and "
        f"{n_items} query bundles to {out}"
    )


@cli.command("index")
@click.argument("gallery_dir", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--eta", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option(
    "--vis-threshold", type=click.Choice(VIS_THRESHOLD_STRATEGIES), default=None
)
@click.option("--disable-cve", is_flag=True, default=None)
@click.option("--skip-bad", is_flag=True, default=None)
@_config_option
def cmd_index(gallery_dir, out, eta, epsilon, vis_threshold, disable_cve, skip_bad, config):
    """Build a gallery index of calibrated and raw global vectors."""
    cfg = resolve_config(
        config,
        eta=eta,
        epsilon=epsilon,
        vis_threshold=vis_threshold,
        disable_cve=disable_cve,
        skip_bad=skip_bad,
    )
    rect = RectifierConfig(
        eta=cfg["eta"], threshold_strategy=cfg["vis_threshold"], epsilon=cfg["epsilon"]
    )
    ids, calibrated, raw = [], [], []
    dominant_images = 0
    skipped = 0
    for bundle_dir in iter_bundle_dirs(gallery_dir):
        try:
            bundle = load_bundle(bundle_dir)
            if not isinstance(bundle, VisualBundle):
                raise BundleError(f"{bundle_dir} is not a visual bundle")
        except BundleError as exc:
            if cfg["skip_bad"]:
                click.echo(f"skipping {bundle_dir.name}: {exc}", err=True)
                skipped += 1
                continue
            raise
        record = calibrate_image(bundle, rect, enabled=not cfg["disable_cve"])
        ids.append(bundle.image_id)
        calibrated.append(record.cls_joint_calibrated)
        raw.append(bundle.cls_joint.astype(np.float64))
        if record.report.dominant:
            dominant_images += 1
    if not ids:
        raise CalibrankError(f"no loadable visual bundles in {gallery_dir}")
    index = GalleryIndex(
        ids=ids,
        calibrated=np.vstack(calibrated),
        raw=np.vstack(raw),
        meta={
            "count": len(ids),
            "dominant_images": dominant_images,
            "dominant_rate": dominant_images / len(ids),
            "skipped": skipped,
        },
    )
    out_path = Path(out)
    save_gallery_index(index, out_path)
    echo_config(cfg, out_path)
    click.echo(
        f"indexed {len(ids)} images, {dominant_images} with dominant tokens "
        f"({skipped} skipped)"
    )


@cli.command("retrieve")
@click.argument("query_dir", type=click.Path(exists=True))
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--topk", type=int, default=None)
@click.option(
    "--text-threshold", type=click.Choice(TEXT_THRESHOLD_STRATEGIES), default=None
)
@click.option("--disable-dcc", is_flag=True, default=None)
@click.option("--threads", type=int, default=None)
@_config_option
def cmd_retrieve(query_dir, index_path, out, lam, topk, text_threshold, disable_dcc, threads, config):
    """Rank the indexed gallery for every query bundle."""
    cfg = resolve_config(
        config,
        **{"lambda": lam},
        topk=topk,
        text_threshold=text_threshold,
        disable_dcc=disable_dcc,
        threads=threads,
    )
    gallery = load_gallery_index(index_path)
    fusion = FusionConfig(lam=cfg["lambda"], k=cfg["topk"])
    query_dirs = iter_bundle_dirs(query_dir)
    if not query_dirs:
        raise CalibrankError(f"no query bundles in {query_dir}")

    def run_query(bundle_dir: Path) -> RankingResult:
        bundle = load_bundle(bundle_dir)
        if not isinstance(bundle, TextBundle):
            raise BundleError(f"{bundle_dir} is not a text bundle")
        query = calibrate_query(bundle, cfg["text_threshold"])
        return fuse_and_rank(
            query,
            query.text_global,
            gallery,
            fusion,
            use_disc=not cfg["disable_dcc"],
        )

    n_workers = max(1, int(cfg["threads"]))
    if n_workers == 1:
        results = [run_query(d) for d in query_dirs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_query, query_dirs))
    results.sort(key=lambda r: r.query_id)

    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    with open(out_path / "results.jsonl", "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(result.to_json())
            fh.write("\n")
    echo_config(cfg, out_path)
    click.echo(f"ranked {len(results)} queries over {len(gallery)} gallery items")


def load_results(path: str | Path) -> list[RankingResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                results.append(RankingResult.from_json(line))
    return results


def load_relevance(path: str | Path) -> dict[str, set[str]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {qid: set(ids) for qid, ids in raw.items()}


@cli.command("eval")
@click.argument("results_file", type=click.Path(exists=True))
@click.option("--relevance", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def cmd_eval(results_file, relevance, out) -> None:
    """Score a results file against a relevance map."""
    metrics = evaluate(load_results(results_file), load_relevance(relevance))
    width = max(len(k) for k in metrics)
    for name, value in metrics.items():
        click.echo(f"{name:<{width}}  {value:.4f}")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")


@cli.command("inspect")
@click.argument("bundle_dir", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--eta", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option(
    "--vis-threshold", type=click.Choice(VIS_THRESHOLD_STRATEGIES), default=None
)
@click.option(
    "--text-threshold", type=click.Choice(TEXT_THRESHOLD_STRATEGIES), default=None
)
@_config_option
def cmd_inspect(bundle_dir, out, eta, epsilon, vis_threshold, text_threshold, config):
    """Export heatmaps (visual bundle) or the subspace dump (text bundle)."""
    cfg = resolve_config(
        config,
        eta=eta,
        epsilon=epsilon,
        vis_threshold=vis_threshold,
        text_threshold=text_threshold,
    )
    bundle = load_bundle(bundle_dir)
    if isinstance(bundle, VisualBundle):
        rect = RectifierConfig(
            eta=cfg["eta"],
            threshold_strategy=cfg["vis_threshold"],
            epsilon=cfg["epsilon"],
        )
        written = export_visual_inspection(bundle, out, rect)
    else:
        written = [export_text_inspection(bundle, out, cfg["text_threshold"])]
    for path in written:
        click.echo(str(path))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except CalibrankError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
