"""CSV serialization for sensor logs, estimate traces, and reports.

One directory holds one log: imu.csv (t,ax,az,w), encoders.csv
(t,a1..an,ad1..adn), effort.csv (t,u1..un), contacts.csv (t,c_<foot>..),
vo.csv (ti,tj,dx,dz,dth), and truth.csv (full simulation rate: pose, rates,
per-foot GRF and flags, torques).  Estimates are single files
estimate_<name>.csv; benchmark reports are report.csv plus timing.csv.
Floats are written with 17 significant digits so every double round-trips
bit-exactly and regenerated reports match the original byte for byte.
"""

import csv
from pathlib import Path

import numpy as np

from .metrics import EstimatorMetrics, MetricsReport
from .mhe import EstimateTrace
from .sim import SensorLog


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def _columns(header, rows):
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        data[i] = [float(cell) for cell in row]
    return data


def save_sensor_log(log: SensorLog, out_dir) -> Path:
    """Write one sensor log as the CSV file set under out_dir."""
    out = Path(out_dir)
    n = log.enc_pos.shape[1]
    feet = list(log.foot_names)

    _write_csv(out / "imu.csv", ["t", "ax", "az", "w"],
               ([_fmt(t), _fmt(a[0]), _fmt(a[1]), _fmt(w)]
                for t, a, w in zip(log.tick_t, log.imu_accel, log.imu_gyro)))

    header = ["t"] + [f"a{i+1}" for i in range(n)] + \
        [f"ad{i+1}" for i in range(n)]
    _write_csv(out / "encoders.csv", header,
               ([_fmt(log.tick_t[k])] + [_fmt(v) for v in log.enc_pos[k]]
                + [_fmt(v) for v in log.enc_vel[k]]
                for k in range(log.n_ticks)))

    _write_csv(out / "effort.csv", ["t"] + [f"u{i+1}" for i in range(n)],
               ([_fmt(log.tick_t[k])] + [_fmt(v) for v in log.effort[k]]
                for k in range(log.n_ticks)))

    _write_csv(out / "contacts.csv", ["t"] + [f"c_{f}" for f in feet],
               ([_fmt(log.tick_t[k])] + [str(int(v))
                                         for v in log.contact_flags[k]]
                for k in range(log.n_ticks)))

    _write_csv(out / "vo.csv", ["ti", "tj", "dx", "dz", "dth"],
               ([_fmt(ti), _fmt(tj), _fmt(dp[0]), _fmt(dp[1]), _fmt(dth)]
                for ti, tj, dp, dth in zip(log.vo_ti, log.vo_tj, log.vo_dp,
                                           log.vo_dth)))

    header = (["t", "px", "pz", "th"] + [f"a{i+1}" for i in range(n)]
              + ["vx", "vz", "w"] + [f"ad{i+1}" for i in range(n)]
              + [c for f in feet for c in (f"f_{f}_x", f"f_{f}_z")]
              + [f"c_{f}" for f in feet]
              + [f"u{i+1}" for i in range(n)])

    def truth_rows():
        for k in range(log.truth_t.size):
            row = [_fmt(log.truth_t[k])]
            row += [_fmt(v) for v in log.truth_q[k]]
            row += [_fmt(v) for v in log.truth_qd[k]]
            row += [_fmt(v) for v in log.truth_grf[k].ravel()]
            row += [str(int(v)) for v in log.truth_flags[k]]
            row += [_fmt(v) for v in log.truth_torque[k]]
            yield row

    _write_csv(out / "truth.csv", header, truth_rows())
    return out


def load_sensor_log(log_dir) -> SensorLog:
    """Read back a CSV file set written by save_sensor_log."""
    d = Path(log_dir)
    header, rows = _read_csv(d / "encoders.csv")
    n = (len(header) - 1) // 2
    enc = _columns(header, rows)

    header, rows = _read_csv(d / "contacts.csv")
    feet = tuple(name[2:] for name in header[1:])
    contacts = _columns(header, rows)

    _, rows = _read_csv(d / "imu.csv")
    imu = _columns(["t", "ax", "az", "w"], rows)
    _, rows = _read_csv(d / "effort.csv")
    effort = _columns(["t"] + [""] * n, rows)
    _, rows = _read_csv(d / "vo.csv")
    vo = _columns(["ti", "tj", "dx", "dz", "dth"], rows) if rows else \
        np.empty((0, 5))

    header, rows = _read_csv(d / "truth.csv")
    truth = _columns(header, rows)
    nc = 3 + n
    q0 = 1
    qd0 = q0 + nc
    f0 = qd0 + nc
    c0 = f0 + 2 * len(feet)
    u0 = c0 + len(feet)

    return SensorLog(
        tick_t=imu[:, 0],
        imu_accel=imu[:, 1:3],
        imu_gyro=imu[:, 3],
        enc_pos=enc[:, 1:1 + n],
        enc_vel=enc[:, 1 + n:],
        effort=effort[:, 1:],
        contact_flags=contacts[:, 1:].astype(bool),
        vo_ti=vo[:, 0],
        vo_tj=vo[:, 1],
        vo_dp=vo[:, 2:4],
        vo_dth=vo[:, 4],
        truth_t=truth[:, 0],
        truth_q=truth[:, q0:q0 + nc],
        truth_qd=truth[:, qd0:qd0 + nc],
        truth_grf=truth[:, f0:f0 + 2 * len(feet)].reshape(-1, len(feet), 2),
        truth_flags=truth[:, c0:c0 + len(feet)].astype(bool),
        truth_torque=truth[:, u0:],
        foot_names=feet)


def save_estimate_trace(trace: EstimateTrace, path) -> Path:
    """Write one estimate trace; the schema mirrors the estimator state."""
    feet = list(trace.foot_names)
    nm = trace.momentum.shape[1]
    header = (["t", "px", "pz", "vx", "vz", "bax", "baz"]
              + [f"m{i+1}" for i in range(nm)]
              + [c for f in feet for c in (f"f_{f}_x", f"f_{f}_z")]
              + ["status", "iterations", "solve_time", "degraded"])

    def rows():
        for k in range(trace.t.size):
            row = [_fmt(trace.t[k])]
            row += [_fmt(v) for v in trace.position[k]]
            row += [_fmt(v) for v in trace.velocity[k]]
            row += [_fmt(v) for v in trace.accel_bias[k]]
            row += [_fmt(v) for v in trace.momentum[k]]
            row += [_fmt(v) for v in trace.forces[k].ravel()]
            row += [trace.status[k], str(int(trace.iterations[k])),
                    _fmt(trace.solve_time[k]),
                    str(int(trace.degraded[k]))]
            yield row

    path = Path(path)
    _write_csv(path, header, rows())
    return path


def load_estimate_trace(path) -> EstimateTrace:
    header, rows = _read_csv(path)
    feet = tuple(name[2:-2] for name in header if name.startswith("f_")
                 and name.endswith("_x"))
    nm = sum(1 for name in header if name[0] == "m" and name[1:].isdigit())
    m0 = 7
    f0 = m0 + nm
    s0 = f0 + 2 * len(feet)
    numeric = np.array([[float(c) for c in row[:s0]] for row in rows])
    return EstimateTrace(
        t=numeric[:, 0],
        position=numeric[:, 1:3],
        velocity=numeric[:, 3:5],
        accel_bias=numeric[:, 5:7],
        momentum=numeric[:, m0:m0 + nm],
        forces=numeric[:, f0:f0 + 2 * len(feet)].reshape(-1, len(feet), 2),
        foot_names=feet,
        status=[row[s0] for row in rows],
        iterations=np.array([int(row[s0 + 1]) for row in rows]),
        solve_time=np.array([float(row[s0 + 2]) for row in rows]),
        degraded=np.array([bool(int(row[s0 + 3])) for row in rows]))


REPORT_FIELDS = ("rmse_v", "rmse_vx", "rmse_vz", "rmse_f", "rmse_fx",
                 "rmse_fz", "violations", "fault")
TIMING_FIELDS = ("solve_mean_ms", "solve_p99_ms")


def save_report(report: MetricsReport, out_dir) -> Path:
    """Write report.csv (accuracy, deterministic) and timing.csv (runtime).

    Solve times are measured wall clock and vary run to run, so they live
    in a separate file to keep report.csv reproducible byte for byte.
    """
    out = Path(out_dir)

    def report_rows():
        for row in report.rows:
            cells = [row.name]
            for name in REPORT_FIELDS:
                value = getattr(row, name)
                if name == "fault":
                    cells.append(value)
                elif name == "violations":
                    cells.append(str(value))
                else:
                    cells.append(_fmt(value))
            yield cells

    _write_csv(out / "report.csv", ("estimator",) + REPORT_FIELDS,
               report_rows())
    _write_csv(out / "timing.csv", ("estimator",) + TIMING_FIELDS,
               ([row.name] + [_fmt(getattr(row, f)) for f in TIMING_FIELDS]
                for row in report.rows))
    return out / "report.csv"


def load_report(path) -> MetricsReport:
    header, rows = _read_csv(path)
    report = MetricsReport()
    for row in rows:
        values = dict(zip(header, row))
        report.rows.append(EstimatorMetrics(
            name=values["estimator"],
            rmse_v=float(values["rmse_v"]),
            rmse_vx=float(values["rmse_vx"]),
            rmse_vz=float(values["rmse_vz"]),
            rmse_f=float(values["rmse_f"]),
            rmse_fx=float(values["rmse_fx"]),
            rmse_fz=float(values["rmse_fz"]),
            violations=int(values["violations"]),
            fault=values["fault"]))
    return report
