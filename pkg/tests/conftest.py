import numpy as np
import pytest

from attireguard import kernels
from attireguard.core import ATTIRE_VOCAB, PERSON_VOCAB, BoundingBox, Detection

BACKENDS = ["python"] + (["cython"] if kernels.compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one implementation."""
    impl = kernels.pure if request.param == "python" else kernels.compiled
    for name in ("decode_candidates", "greedy_nms", "clipped_centroid"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


def attire(name, cx, cy, w, h, score=0.9):
    return Detection(BoundingBox(cx, cy, w, h), ATTIRE_VOCAB.label(name), score)


def person(cx, cy, w, h, score=0.9):
    return Detection(BoundingBox(cx, cy, w, h), PERSON_VOCAB.label("Person"), score)


def random_box(rng, lo=0.0, hi=100.0, smin=2.0, smax=30.0):
    return BoundingBox(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(smin, smax), rng.uniform(smin, smax))


def write_run_fixture(root, attire_name="T-Shirt", frames=5, images=False):
    """Five-frame scripted stream: one person wearing ``attire_name`` in zone lab (Jacket only)."""
    from attireguard.augment import RgbImage, write_ppm

    root.mkdir(parents=True, exist_ok=True)
    lines, manifest = [], []
    for f in range(1, frames + 1):
        lines.append(f"{f},Person,{100 + f},120,60,160,0.95")
        lines.append(f"{f},{attire_name},{100 + f},100,40,50,0.85")
        lines.append(f"{f},Jacket,{100 + f},150,40,30,0.9")
        manifest.append(f"{f},320,240,lab,0.5")
        if images:
            (root / "frames").mkdir(exist_ok=True)
            write_ppm(root / "frames" / f"{f}.ppm", RgbImage.blank(320, 240, (40, 40, 40)))
    (root / "annotations.txt").write_text("\n".join(lines) + "\n")
    (root / "manifest.txt").write_text("# frame_id,width,height,zone,illumination\n" + "\n".join(manifest) + "\n")
    (root / "policy.txt").write_text("lab: Jacket\n")
    return root


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, detail)`` records one acceptance verdict and returns ``ok``."""

    def record(n, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] #{n:>2} {name}: {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
