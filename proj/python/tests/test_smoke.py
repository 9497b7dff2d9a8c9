import os
import pathlib

import pytest

import ccm

ROOT = pathlib.Path(os.environ.get("CCM_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
TINY = ROOT / "configs" / "tiny.json"


def test_stage_names():
    assert ccm.stages()[0] == "gen-data"
    assert ccm.stages()[-1] == "report"
    assert len(ccm.stages()) == 9


def test_line_points_endpoints_are_exact():
    anchor = [0.1, -0.4, 2.0]
    low = [0.3, -0.2, 1.7]
    high = [-0.1, -0.5, 2.6]
    pts = ccm.line_points(anchor, low, high, [-1.0, 0.0, 1.0, 1.5])
    assert pts[0] == low
    assert pts[2] == high
    assert pts[1] == pytest.approx([(a + b) / 2 for a, b in zip(low, high)], abs=1e-15)
    assert pts[3] == pytest.approx([-0.25 * a + 1.25 * b for a, b in zip(low, high)], abs=1e-12)


def test_selectors_and_protocol():
    assert ccm.default_bank() == [-1.5 + 0.25 * k for k in range(13)]
    assert ccm.select_coord(2.5) == 1.5
    assert ccm.wrong_sign(0.5) == -0.5
    assert ccm.select_scale(0.5, 2.0) == 1.0
    assert ccm.argmin_alpha([-0.5, 0.5], [1.0, 1.0]) == 0
    cal, fut = ccm.split_protocol(8, 4)
    assert cal == [1, 2, 3, 4] and fut == [5, 6, 7, 8]
    assert ccm.continuation_bound(0.1, 0.2, 0.4, 1.5) == pytest.approx(0.525)
    with pytest.raises(ValueError):
        ccm.split_protocol(4, 4)


def test_tiny_pipeline_and_verify(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(ccm.MissingArtifact):
        ccm.run_stage(TINY, "select", out)
    results = ccm.run_pipeline(TINY, out)
    assert [r["stage"] for r in results] == ccm.stages()
    assert all(r["ok"] for r in results)
    ok, lines = ccm.verify(out)
    assert ok and len(lines) == 9
    assert (out / "report" / "main_table.csv").read_text().startswith("method,")
    assert len(ccm.config_digest(TINY)) == 64
