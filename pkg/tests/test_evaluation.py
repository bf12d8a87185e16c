import math

import numpy as np
import pytest

from docvo.evaluation import (
    compute_ate,
    compute_rte_rre,
    evaluate,
    segment_errors,
    trajectory_distances,
    umeyama_alignment,
)
from docvo.geometry import PoseSE3


def straight(n, spacing=1.0):
    P = np.tile(np.eye(4), (n, 1, 1))
    P[:, 2, 3] = spacing * np.arange(n)
    return P


def curvy(n):
    rel = PoseSE3([0.0, 0.01, 0.002], [0.05, 0.0, 1.0]).matrix
    P = [np.eye(4)]
    for _ in range(n - 1):
        P.append(P[-1] @ rel)
    return np.stack(P)


def test_distances():
    np.testing.assert_allclose(trajectory_distances(straight(5, 2.0)), [0, 2, 4, 6, 8])


def test_identical_is_zero():
    gt = curvy(900)
    rte, rre, _, n = compute_rte_rre(gt, gt)
    assert rte == 0.0 and rre == 0.0 and n > 0
    assert compute_ate(gt, gt) == 0.0


def test_scaled_straight_line():
    gt = straight(1001)
    est = gt.copy()
    est[:, 2, 3] *= 1.02
    rte, rre, breakdown, _ = compute_rte_rre(est, gt)
    assert rte == pytest.approx(2.0, abs=1e-6) and rre == 0.0
    assert all(b.t_err_percent == pytest.approx(2.0, abs=1e-6) for b in breakdown)


def test_global_rotation_invariance():
    gt = curvy(700)
    est = curvy(700)
    est[:, :3, 3] *= 1.01
    G = PoseSE3([0.3, -0.2, 0.5], [4.0, 1.0, -2.0]).matrix
    moved = np.einsum("ij,njk->nik", G, est)
    a = compute_rte_rre(est, gt)
    b = compute_rte_rre(moved, np.einsum("ij,njk->nik", G, gt))
    assert b[0] == pytest.approx(a[0], rel=1e-9) and b[1] == pytest.approx(a[1], abs=1e-9)
    r = compute_rte_rre(moved, moved)
    assert r[0] == pytest.approx(0.0, abs=1e-9)


def test_segment_end_rule():
    gt = straight(11, 30.0)
    segs = segment_errors(gt, gt, lengths=(100,))
    # from frame i the first frame with arc length >= 100 m is i + 4
    assert [s[0] for s in segs] == list(range(7))


def test_too_short_flagged():
    rep = evaluate(straight(20), straight(20))
    assert rep.too_short and rep.rte_percent is None and rep.segments == 0
    assert all(math.isnan(b.t_err_percent) for b in rep.breakdown)


def test_ate_offset():
    gt = curvy(50)
    est = gt.copy()
    est[:, :3, 3] += [0.3, -0.4, 0.0]
    assert compute_ate(est, gt, "none") == pytest.approx(0.5, abs=1e-12)
    assert compute_ate(est, gt, "se3") < 1e-9


def test_ate_single_displacement():
    n = 16
    gt = straight(n)
    est = gt.copy()
    est[5, 0, 3] += 3.0
    assert compute_ate(est, gt, "none") == pytest.approx(3.0 / math.sqrt(n), abs=1e-12)


def test_ate_rigid_alignment_recovers_transform():
    gt = curvy(60)
    G = PoseSE3([0.1, 0.2, -0.3], [1.0, 2.0, 3.0]).matrix
    est = np.einsum("ij,njk->nik", G, gt)
    s, R, t = umeyama_alignment(est[:, :3, 3], gt[:, :3, 3])
    assert s == 1.0
    np.testing.assert_allclose(R, G[:3, :3].T, atol=1e-9)
    assert compute_ate(est, gt) < 1e-9


def test_length_mismatch():
    with pytest.raises(ValueError):
        compute_ate(straight(5), straight(6))


def test_report_outputs(tmp_path):
    gt = straight(1001)
    rep = evaluate(gt, gt)
    assert "RTE" in rep.as_text()
    rep.write_csv(tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0].startswith("length_m") and len(rows) == 9
