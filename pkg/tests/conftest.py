import numpy as np
import pytest

from refrec.accel import Bvh
from refrec.capture import Scene, orbit_rig, simulate_view
from refrec.shapes import blob, icosphere

RIG = dict(cam_distance=3.0, monitor_distance=2.0, fx=60.0, fy=60.0,
           width=64, height=64, monitor_res=(256, 256), monitor_pitch=0.025)


def make_scene(mesh, eta=1.5, n_views=36, **overrides):
    kw = dict(RIG, **overrides)
    cams, mons = orbit_rig(n_views, **kw)
    return Scene(mesh, eta, cams, mons)


def capture_scene(scene):
    """Simulate every view. Returns (corrs, masks)."""
    bvh = Bvh(scene.gt_mesh)
    pairs = [simulate_view(scene, u, bvh) for u in range(scene.n_views)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


@pytest.fixture(scope="session")
def sphere_mesh():
    return icosphere(4)


@pytest.fixture(scope="session")
def blob_mesh():
    return blob()


@pytest.fixture(scope="session")
def sphere_scene(sphere_mesh):
    return make_scene(sphere_mesh, n_views=9)


@pytest.fixture(scope="session")
def sphere_capture(sphere_scene):
    return capture_scene(sphere_scene)


@pytest.fixture(scope="session")
def blob_scene(blob_mesh):
    return make_scene(blob_mesh, n_views=36)


@pytest.fixture(scope="session")
def blob_capture(blob_scene):
    return capture_scene(blob_scene)


@pytest.fixture(scope="session")
def blob_hires():
    """Blob captured at 192x192: fine enough that nearly every triangle
    receives pixel-center rays, as the coverage diagnostic assumes.
    Returns (mesh, scene, corrs, masks)."""
    mesh = blob()
    scene = make_scene(mesh, n_views=36, width=192, height=192,
                       fx=180.0, fy=180.0)
    corrs, masks = capture_scene(scene)
    return mesh, scene, corrs, masks


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
