import numpy as np
import pytest

from monohuman.mesh import TriangleMesh


def uv_sphere(radius=0.5, n_lat=24, n_lon=48, center=(0.0, 0.0, 0.0)):
    """Closed UV sphere with outward counter-clockwise faces and exact analytic normals."""
    lat = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    lon = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    dirs = np.stack([np.sin(la) * np.cos(lo), np.cos(la), np.sin(la) * np.sin(lo)], -1).reshape(-1, 3)
    dirs = np.vstack([[0, 1, 0], dirs, [0, -1, 0]])
    tris = []
    ring = lambda i, j: 1 + i * n_lon + j % n_lon
    for j in range(n_lon):
        tris.append([0, ring(0, j + 1), ring(0, j)])
        last = len(dirs) - 1
        tris.append([last, ring(n_lat - 2, j), ring(n_lat - 2, j + 1)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            tris += [[a, b, d], [a, d, c]]
    return TriangleMesh(dirs * radius + np.asarray(center), np.array(tris), vertex_normals=dirs)


@pytest.fixture
def sphere():
    return uv_sphere()


@pytest.fixture
def tiny_cfg(tmp_path):
    from monohuman.config import RunConfig

    return RunConfig(resolution=16, views=2, width=8, n_train_ids=2, poses_per_id=1, n_test_ids=1,
                     steps_supervisor=3, steps_ugl=3, steps_cgt=3, steps_anim=3, eval_samples=300,
                     lr=1e-3, out=str(tmp_path / "runs"))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
