"""Shared geometry fixtures for the test suite."""

import math

import numpy as np

from meshsplat.core import TriMesh


def uv_sphere(stacks: int = 6, sectors: int = 10, radius: float = 1.0) -> TriMesh:
    """Latitude/longitude sphere; 6 stacks x 10 sectors gives exactly 100 faces."""
    vertices = [(0.0, 0.0, radius)]
    for i in range(1, stacks):
        phi = math.pi * i / stacks
        for j in range(sectors):
            theta = 2 * math.pi * j / sectors
            vertices.append(
                (
                    radius * math.sin(phi) * math.cos(theta),
                    radius * math.sin(phi) * math.sin(theta),
                    radius * math.cos(phi),
                )
            )
    vertices.append((0.0, 0.0, -radius))
    top, bottom = 0, len(vertices) - 1

    def ring(i, j):
        return 1 + (i - 1) * sectors + (j % sectors)

    faces = []
    for j in range(sectors):
        faces.append((top, ring(1, j), ring(1, j + 1)))
    for i in range(1, stacks - 1):
        for j in range(sectors):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, b))
            faces.append((b, c, d))
    for j in range(sectors):
        faces.append((bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)))
    return TriMesh(np.array(vertices), np.array(faces, dtype=np.int64))


def mesh_to_obj_text(mesh: TriMesh) -> str:
    lines = [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    return "\n".join(lines) + "\n"
