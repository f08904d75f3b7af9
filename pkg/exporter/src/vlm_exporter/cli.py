"""CLI: demo-asset generation and feature export."""
from __future__ import annotations

import sys

import click

from .demo import make_demo_images, make_demo_model
from .export import ExportError, export_text, export_visual, load_model


@click.group()
def cli() -> None:
    """Export feature bundles from a frozen CLIP-style dual encoder."""


@cli.command("make-demo-model")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_make_demo_model(out, seed) -> None:
    """Write a tiny randomly-initialized CLIP checkpoint for offline runs."""
    path = make_demo_model(out, seed=seed)
    click.echo(f"wrote demo checkpoint to {path}")


@cli.command("make-demo-images")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_make_demo_images(out, count, seed) -> None:
    """Write synthetic PNG images for smoke testing the export path."""
    paths = make_demo_images(out, count, seed=seed)
    click.echo(f"wrote {len(paths)} images to {out}")


@cli.command("export")
@click.option("--model", "model_id", required=True)
@click.option("--images", multiple=True, type=click.Path(exists=True))
@click.option("--captions", multiple=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--audit", is_flag=True, default=False)
def cmd_export(model_id, images, captions, out, audit) -> None:
    """Export visual bundles for --images and/or text bundles for --captions."""
    if not images and not captions:
        raise ExportError("nothing to export: pass --images and/or --captions")
    model, processor = load_model(model_id)
    written = []
    if images:
        written += export_visual(
            list(images), model, processor, out, model_id=model_id, audit=audit
        )
    if captions:
        written += export_text(list(captions), model, processor, out, model_id=model_id)
    click.echo(f"wrote {len(written)} bundles to {out}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except ExportError as exc:
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
