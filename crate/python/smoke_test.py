"""Quick check of the wqgate extension module.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math
import os
import sys
import tempfile

import wqgate


def main():
    line = "$WQ1,dev01,7,35000,512,430,287,120*63\n"
    frame = wqgate.parse_frame(line)
    assert frame.kind == "WQ1" and frame.device_id == "dev01"
    assert frame.channels == [512, 430, 287, 120]
    assert frame.encode() == line
    assert wqgate.checksum("WQ1,dev01,7,35000,512,430,287,120") == 0x63

    try:
        wqgate.parse_frame(line.replace("512", "513"))
    except wqgate.FrameError as e:
        print("corrupt line rejected:", e)
    else:
        sys.exit("corrupt line accepted")

    try:
        wqgate.calibrate_frame(frame)
    except wqgate.CalibrationError as e:
        print("out-of-range reading rejected:", e)
    else:
        sys.exit("2.5 V on the temperature probe accepted")

    raw = wqgate.SensorFrame("WQ1", "dev01", 8, 40000, [51, 430, 287, 820])
    values = wqgate.calibrate_frame(raw)
    print("calibrated:", values)
    assert abs(values.temp_c - 51 * 5.0 / 1023 * 100) < 1e-9

    fixed = wqgate.SensorFrame("WQ2", "Site-1", 0, 0, [2884, 9080, 34950, 2000])
    m = wqgate.calibrate_frame(wqgate.parse_frame(fixed.encode()))
    assert m.as_tuple() == (28.84, 9.08, 349.5, 2.0)

    assert abs(wqgate.ph_from_hydrogen_activity(3.162e-10) - 9.5) < 1e-3
    assert math.isclose(wqgate.ec_to_tds(100.0), 64.0)
    cfg = wqgate.CalibrationConfig(k_e=0.7)
    assert math.isclose(wqgate.ec_to_tds(100.0, cfg), 70.0)
    slope, intercept = wqgate.calibrate_ph_two_point(2.5, 7.0, 3.0, 4.0)
    assert math.isclose(wqgate.voltage_to_ph(2.5, cfg.with_ph_line(slope, intercept)), 7.0)

    assert wqgate.classify_turbidity(24.99) == "MediumTurbid"
    assert wqgate.classify_turbidity(50.0) == "ModerateTurbid"

    ok = wqgate.assess_measurements(wqgate.Measurements(25.0, 7.0, 50.0, 0.5))
    assert ok.overall == "WithinLimits" and ok.violations == []
    bad = wqgate.assess_measurements(wqgate.Measurements(37.0, 9.0, 200.0, 60.0))
    assert bad.violations == ["temperature", "ph", "tds", "turbidity"]
    print("assessment:", bad)

    site1 = [
        wqgate.Measurements(28.84, 9.08, 349.50, 2.00),
        wqgate.Measurements(29.81, 9.48, 348.23, 1.95),
        wqgate.Measurements(32.26, 9.66, 349.50, 1.97),
        wqgate.Measurements(25.90, 9.76, 350.75, 1.94),
        wqgate.Measurements(27.86, 9.86, 350.75, 1.87),
    ]
    avg = wqgate.site_average(site1)
    print("site average:", avg)
    assert abs(avg.temp_c - 28.934) < 1e-9

    window = wqgate.RollingWindow(3)
    for m in site1:
        stats = window.push(m)
    assert len(window) == 3 and stats.count == 3

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "readings.jsonl")
        with open(path, "w") as f:
            f.write(
                '{"ts":"2024-05-01T12:00:00.000Z","device_id":"a_1","seq":0,"temp_c":20.0,'
                '"ph":7.0,"tds_ppm":100.0,"turbidity_ntu":1.0,"ph_status":"Ideal",'
                '"turbidity_level":"MediumTurbid","temp_status":"Normal","tds_status":"Acceptable",'
                '"overall":"WithinLimits","violations":[]}\n'
            )
        report = json.loads(wqgate.summarize_log(path, by="site"))
        assert report["groups"][0]["id"] == "a"

    print("smoke test passed")


if __name__ == "__main__":
    main()
