import pytest

from dtrms.calibration import (
    DEFAULT_SWEEP,
    CalibrationPoint,
    CalibrationTable,
    default_table,
    fit_affine,
    points_to_csv,
    ratio_spread,
    run_sweep,
    verify_constancy,
)
from dtrms.errors import DegenerateInput, OutOfRange
from dtrms.network_sim import RadioModel, simulated_transport
from dtrms.signal_chain import AmplifierStage, Chain


def normal_equations(xs, ys):
    """Closed-form simple linear regression, independent of numpy.linalg."""
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    icpt = my - slope * mx
    return slope, icpt, max(abs(y - (slope * x + icpt)) for x, y in zip(xs, ys))


def forward_oracle(t):
    r = 100.0 * (1 + 3.9083e-3 * t - 5.775e-7 * t * t)
    v = 6.0 * 5.0 * (r / (r + 100.0) - 0.5) + 1.8
    return v, int(v / 5.0 * 1023 // 1)


def test_sweep_matches_forward_oracle():
    pts = run_sweep([0, 50, 100])
    assert len(pts) == 3
    for p in pts:
        v, code = forward_oracle(p.set_temp_c)
        assert p.tx_volts == pytest.approx(v, abs=1e-12)
        assert p.rx_code == code


def test_sweep_guards():
    with pytest.raises(ValueError):
        run_sweep([25.0])
    with pytest.raises(ValueError):
        run_sweep([10.0, 0.0])
    with pytest.raises(OutOfRange):
        run_sweep([0.0, 200.0])


def test_lossless_simulated_transport_is_transparent():
    ideal = run_sweep(DEFAULT_SWEEP)
    sim = run_sweep(DEFAULT_SWEEP, transport=simulated_transport(RadioModel(0.0), seed=5, hops=3))
    assert sim == ideal


def test_lossy_transport_marks_missing_and_continues():
    pts = run_sweep(DEFAULT_SWEEP, transport=simulated_transport(RadioModel(0.8, max_retries=0), seed=2))
    missing = [p for p in pts if p.missing]
    assert 0 < len(missing) < len(pts) - 1
    ideal = {p.set_temp_c: p.rx_code for p in run_sweep(DEFAULT_SWEEP)}
    for p in pts:
        if not p.missing:
            assert p.rx_code == ideal[p.set_temp_c]
    slope, _, _ = fit_affine(pts)
    assert slope == pytest.approx(204.6, abs=1.0)


def test_fit_exact_affine():
    # v = 5n/1023 puts code = 204.6 * v exactly on the integers n
    exact = [CalibrationPoint(float(i), 5.0 * n / 1023, n) for i, n in enumerate([0, 100, 500, 1023])]
    slope, icpt, resid = fit_affine(exact)
    assert slope == pytest.approx(204.6)
    assert icpt == pytest.approx(0.0, abs=1e-9)
    assert resid == pytest.approx(0.0, abs=1e-9)


def test_fit_two_points_interpolates():
    pts = [CalibrationPoint(0.0, 1.0, 200), CalibrationPoint(1.0, 3.0, 610)]
    slope, icpt, resid = fit_affine(pts)
    assert slope == pytest.approx(205.0)
    assert icpt == pytest.approx(-5.0)
    assert resid == pytest.approx(0.0, abs=1e-9)


def test_fit_degenerate():
    with pytest.raises(DegenerateInput):
        fit_affine([CalibrationPoint(0.0, 1.0, 200), CalibrationPoint(1.0, 1.0, 201)])


def test_default_sweep_fit_against_oracle():
    pts = run_sweep(DEFAULT_SWEEP)
    slope, icpt, resid = fit_affine(pts)
    o_slope, o_icpt, o_resid = normal_equations([p.tx_volts for p in pts], [p.rx_code for p in pts])
    assert slope == pytest.approx(o_slope, rel=1e-9)
    assert icpt == pytest.approx(o_icpt, abs=1e-6)
    assert resid == pytest.approx(o_resid, abs=1e-9)
    assert slope == pytest.approx(204.6, abs=0.5)
    assert resid <= 1.0


def test_verify_constancy_pass_and_fail():
    table = default_table()
    assert verify_constancy(table).passed
    pts = list(table.points)
    pts[5] = CalibrationPoint(pts[5].set_temp_c, pts[5].tx_volts, pts[5].rx_code + 5)
    bad = CalibrationTable(tuple(pts), table.slope_codes_per_volt, table.intercept_codes,
                           table.max_residual_codes)
    res = verify_constancy(bad)
    assert not res.passed
    assert res.worst == pts[5]


def test_zero_offset_ratio_spread():
    chain = Chain(amp=AmplifierStage(offset_volts=0.0))
    pts = run_sweep([t for t in DEFAULT_SWEEP if t >= 0], chain)
    ratios = [p.rx_code / p.tx_volts for p in pts if p.tx_volts >= 0.5]
    assert len(ratios) >= 5
    assert (max(ratios) - min(ratios)) / max(ratios) <= 0.01
    assert ratio_spread(pts) == pytest.approx((max(ratios) - min(ratios)) / max(ratios))


def test_inversion_recovers_sweep_temperatures():
    table = default_table()
    for p in table.points:
        assert table.temperature(p.rx_code) == pytest.approx(p.set_temp_c, abs=0.5)


def test_table_json_and_csv(tmp_path):
    table = default_table()
    path = tmp_path / "cal.json"
    table.save_json(path)
    assert CalibrationTable.load_json(path) == table
    csv_text = points_to_csv(table.points)
    lines = csv_text.splitlines()
    assert lines[0] == "temp_c,tx_volts,rx_code"
    assert len(lines) == len(table.points) + 1
    t, v, c = lines[1].split(",")
    assert (float(t), float(v), int(c)) == (table.points[0].set_temp_c, table.points[0].tx_volts,
                                            table.points[0].rx_code)


def test_table_invariants():
    with pytest.raises(ValueError):
        CalibrationTable((CalibrationPoint(0.0, 1.0, 10), CalibrationPoint(1.0, 2.0, 5)), 1, 0, 0)
    with pytest.raises(ValueError):
        CalibrationTable((CalibrationPoint(1.0, 1.0, 10), CalibrationPoint(1.0, 2.0, 15)), 1, 0, 0)
