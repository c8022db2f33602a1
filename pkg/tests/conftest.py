"""Shared test fixtures and helpers.

Provides the synthetic three-class corpus builder used across the suite,
an in-process CLI runner, and the acceptance-criteria reporter that
prints one PASS/FAIL line per criterion in the terminal summary.
"""
import contextlib
import io
import json
import os

import numpy as np
import pytest
from PIL import Image, ImageDraw

from crackseg import cli

# ---------------------------------------------------------------------------
# synthetic corpus


def make_corpus(root, n=10, size=64, seed=0):
    """Write ``n`` synthetic image/mask pairs with all three classes present.

    Each mask contains a 2-px-wide edge-to-edge line of class 1 (crack) and
    a filled rectangle of class 2 (delamination) on a class-0 background.
    Image pixels are colored by class (dark cracks, light delamination) so
    the classes are learnable from color alone. Returns (images_dir,
    masks_dir) as strings.
    """
    images = os.path.join(str(root), "images")
    masks = os.path.join(str(root), "masks")
    os.makedirs(images)
    os.makedirs(masks)
    rng = np.random.default_rng(seed)
    if size >= 48:
        r_lo, r_hi, r_w, r_h = 4, size - 20, 12, 8
    else:
        r_lo, r_hi, r_w, r_h = 2, size - 12, 8, 6
    for i in range(n):
        mask = Image.new("L", (size, size), 0)
        d = ImageDraw.Draw(mask)
        x0, x1 = rng.integers(0, size, 2)
        d.line([(int(x0), 0), (int(x1), size - 1)], fill=1, width=2)
        rx, ry = rng.integers(r_lo, r_hi, 2)
        d.rectangle([int(rx), int(ry), int(rx) + r_w, int(ry) + r_h], fill=2)
        m = np.asarray(mask, dtype=np.uint8)
        base = np.full((size, size, 3), 0.5) + rng.normal(0, 0.03, (size, size, 3))
        base[m == 1] = [0.15, 0.12, 0.1]
        base[m == 2] = [0.8, 0.78, 0.75]
        img = np.clip(base + rng.normal(0, 0.02, base.shape), 0, 1)
        Image.fromarray((img * 255).astype(np.uint8)).save(
            os.path.join(images, f"img{i:02d}.png"))
        mask.save(os.path.join(masks, f"img{i:02d}.png"))
    return images, masks


def write_mask_png(path, array):
    """Write a uint8 class-index array as a grayscale PNG."""
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="L").save(path)


@pytest.fixture(scope="session")
def corpus32(tmp_path_factory):
    """Six 32x32 image/mask pairs; shared read-only across tests."""
    root = tmp_path_factory.mktemp("corpus32")
    images, masks = make_corpus(root, n=6, size=32, seed=0)
    return {"images": images, "masks": masks, "n": 6, "size": 32}


@pytest.fixture(scope="session")
def corpus64(tmp_path_factory):
    """Ten 64x64 image/mask pairs; the overfit-fixture corpus."""
    root = tmp_path_factory.mktemp("corpus64")
    images, masks = make_corpus(root, n=10, size=64, seed=0)
    return {"images": images, "masks": masks, "n": 10, "size": 64}


# ---------------------------------------------------------------------------
# CLI helpers


def run_cli(*args):
    """Run the CLI in-process. Returns (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in args])
    return code, out.getvalue(), err.getvalue()


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    return str(path)


# ---------------------------------------------------------------------------
# acceptance reporting

ACCEPTANCE_RESULTS = []


class _Criterion:
    def __init__(self, name):
        self.name = name
        self.detail = ""


@contextlib.contextmanager
def criterion(name):
    """Record one acceptance criterion; prints PASS/FAIL in the summary.

    Any exception (assertion or crash) inside the block records FAIL and
    re-raises so the test itself fails too.
    """
    c = _Criterion(name)
    try:
        yield c
    except BaseException as e:
        ACCEPTANCE_RESULTS.append((name, False, f"{type(e).__name__}: {e}"))
        raise
    ACCEPTANCE_RESULTS.append((name, True, c.detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
