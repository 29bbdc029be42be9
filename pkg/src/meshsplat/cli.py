"""Command-line entry points.

Exit codes: 0 success, 1 generic package error, 2 missing/unreadable input
file, 3 soup extraction rejected degenerate splats, 4 metrics found no
matching image pairs.
"""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click
import numpy as np

from .core import SplatBatch
from .deform import DeformSpec, Keyframes, apply_deform, interpolate, subdivide_large_faces
from .errors import MeshSplatError, SoupExtractionError
from .faceparam import BoundScene, bind_uniform, realize_all
from .io import (
    load_cameras,
    load_deform_spec,
    load_mesh_obj,
    load_scene,
    load_splats,
    save_bindings,
    save_soup,
)
from .render import ImageBuffer, psnr, rasterize
from .service import DEFAULT_PORT, serve_scene
from .soup import TriangleSoup, extract_soup, realize_soup_batch


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FileNotFoundError as err:
            _fail(f"file not found: {err.filename or err}", 2)
        except IsADirectoryError as err:
            _fail(f"expected a file: {err.filename or err}", 2)
        except SoupExtractionError as err:
            _fail(str(err), 3)
        except MeshSplatError as err:
            _fail(str(err), 1)

    return wrapper


def _parse_background(text: str) -> tuple:
    try:
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError
    except ValueError:
        raise click.BadParameter(f"background must be 'r,g,b' in [0,1], got {text!r}")
    return tuple(parts)


@click.group()
@click.version_option(package_name="meshsplat")
def main():
    """Mesh-bound Gaussian splats: bind, extract, deform, render, serve."""


@main.command()
@click.argument("mesh_path", type=click.Path())
@click.argument("out_path", type=click.Path())
@click.option("-k", "--per-face", "k", default=1, show_default=True,
              help="Gaussians per mesh face.")
@click.option("--seed", default=0, show_default=True, help="Barycentric sampling seed.")
@click.option("--subdivide-area", type=float, default=None,
              help="Split faces above this area before binding.")
@guarded
def bind(mesh_path, out_path, k, seed, subdivide_area):
    """Bind splats to an OBJ mesh and write a .gmbind scene."""
    mesh = load_mesh_obj(mesh_path)
    if subdivide_area is not None:
        mesh = subdivide_large_faces(mesh, subdivide_area)
    scene = bind_uniform(mesh, k=k, seed=seed)
    save_bindings(scene, out_path)
    click.echo(f"faces: {mesh.face_count}")
    click.echo(f"splats: {len(scene.bindings)}")
    click.echo(f"wrote {out_path}")


@main.command("extract-soup")
@click.argument("ply_path", type=click.Path())
@click.argument("out_path", type=click.Path())
@click.option("--skip-degenerate", is_flag=True,
              help="Drop splats too thin to form triangles instead of failing.")
@guarded
def extract_soup_cmd(ply_path, out_path, skip_degenerate):
    """Extract a Triangle Soup (.gmsoup) from a splat PLY."""
    splats = load_splats(ply_path)
    soup = extract_soup(splats, skip_degenerate=skip_degenerate)
    save_soup(soup, out_path)
    click.echo(f"triangles: {len(soup)}")
    dropped = len(splats) - len(soup)
    if skip_degenerate and dropped:
        click.echo(f"dropped: {dropped} degenerate splat(s)")
    click.echo(f"wrote {out_path}")


def _realize_scene(scene_path, deform_path, time_value):
    spec = None
    if deform_path is not None:
        loaded = load_deform_spec(deform_path)
        if isinstance(loaded, Keyframes):
            if time_value is None:
                raise click.UsageError("--time is required with a keyframes file")
            spec = interpolate(loaded, time_value)
        else:
            if time_value is not None:
                raise click.UsageError("--time only applies to keyframes files")
            spec = loaded

    kind, payload = load_scene(scene_path)
    if kind == "splats":
        if spec is not None:
            raise click.UsageError(
                "deformation requires a mesh-backed scene (.gmbind or .gmsoup)"
            )
        return SplatBatch.from_gaussians(payload)
    if spec is not None:
        if isinstance(payload, BoundScene):
            payload = payload.with_mesh(apply_deform(payload.mesh, spec))
        else:
            payload = apply_deform(payload, spec)
    if isinstance(payload, BoundScene):
        return realize_all(payload)
    return realize_soup_batch(payload)


@main.command()
@click.argument("scene_path", type=click.Path())
@click.argument("cameras_path", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--width", default=800, show_default=True)
@click.option("--height", default=800, show_default=True)
@click.option("--background", default="0,0,0", show_default=True,
              help="Background color 'r,g,b' in [0,1].")
@click.option("--deform", "deform_path", type=click.Path(), default=None,
              help="Deform spec or keyframes JSON applied before rendering.")
@click.option("--time", "time_value", type=float, default=None,
              help="Keyframe time (with a keyframes --deform file).")
@guarded
def render(scene_path, cameras_path, out_dir, width, height, background, deform_path, time_value):
    """Render a scene from every camera in a transforms.json."""
    bg = _parse_background(background)
    batch = _realize_scene(scene_path, deform_path, time_value)
    cameras = load_cameras(cameras_path, width=width, height=height)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cameras):
        image = rasterize(batch, cam, bg)
        image.save_png(out / f"{i:05d}.png")
    click.echo(f"rendered {len(cameras)} frame(s) of {len(batch)} splats to {out}")


@main.command()
@click.argument("dir_a", type=click.Path())
@click.argument("dir_b", type=click.Path())
@guarded
def metrics(dir_a, dir_b):
    """Per-image and mean PSNR between two directories of PNGs, paired by name."""
    a_dir, b_dir = Path(dir_a), Path(dir_b)
    if not a_dir.is_dir() or not b_dir.is_dir():
        _fail(f"metrics needs two directories, got {dir_a!r} and {dir_b!r}", 2)
    names_a = {p.name for p in a_dir.glob("*.png")}
    names_b = {p.name for p in b_dir.glob("*.png")}
    for name in sorted(names_a ^ names_b):
        where = dir_a if name in names_a else dir_b
        click.echo(f"warning: {name} only in {where}, excluded", err=True)
    common = sorted(names_a & names_b)
    if not common:
        _fail("no image pairs matched by filename", 4)
    width = max(len(n) for n in common)
    values = []
    click.echo(f"{'image'.ljust(width)}  psnr_db")
    for name in common:
        value = psnr(ImageBuffer.from_png(a_dir / name), ImageBuffer.from_png(b_dir / name))
        values.append(value)
        click.echo(f"{name.ljust(width)}  {value:8.3f}")
    click.echo(f"{'mean'.ljust(width)}  {float(np.mean(values)):8.3f}")


@main.command()
@click.argument("scene_path", type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=DEFAULT_PORT, show_default=True)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory of editor client files to serve over plain HTTP.")
@click.option("--background", default="0,0,0", show_default=True)
@guarded
def serve(scene_path, host, port, static_dir, background):
    """Serve the interactive editing session for a scene file."""
    bg = _parse_background(background)
    server = serve_scene(scene_path, host=host, port=port, static_dir=static_dir, background=bg)
    click.echo(f"session service on ws://{host}:{server.port}/ws")
    if static_dir:
        click.echo(f"editor client on http://{host}:{server.port}/")
    click.echo("press Ctrl+C to stop")
    server.join()


if __name__ == "__main__":
    main()
