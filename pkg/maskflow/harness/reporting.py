'''
Tables, sweep curves and plots of experiment records.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import logging
import os

import dateutil.parser
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # pylint: disable=wrong-import-position
import numpy as np
from tabulate import tabulate
from tzlocal import get_localzone

import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


TABLE_FORMAT = "simple"
TABLE_NAME = "records.txt"


def render_datetime(datetime_str):
    '''Renders an ISO 8601 time in the local timezone.'''
    if not datetime_str:
        return ""

    dt = dateutil.parser.isoparse(datetime_str)
    return dt.astimezone(get_localzone()).strftime("%Y-%m-%d %H:%M:%S %Z")


def render_axis_value(value):
    '''Renders a sweep value, which may be a number or a range.'''
    if isinstance(value, (list, tuple)):
        return "[%s]" % ", ".join(render_axis_value(v) for v in value)
    if isinstance(value, float):
        return "%g" % value
    return str(value)


def records_table(records, metric="si_sdri"):
    '''Renders one row per record: name, swept values, final loss, the
    corpus median of the metric per scenario, and the wall-clock time.

    Args:
        records (list): a list of ExperimentRecords
        metric (str, optional): the metric to tabulate

    Returns:
        the table string
    '''
    axes = _sweep_axes(records)
    scenarios = []
    for record in records:
        for r in record.reports:
            if r.scenario not in scenarios:
                scenarios.append(r.scenario)

    headers = (
        ["name"] + axes + ["final loss"]
        + ["%s %s" % (s, metric) for s in scenarios] + ["wall clock"])
    rows = []
    for record in records:
        row = [record.name]
        row += [render_axis_value(record.sweep.get(a, "")) for a in axes]
        loss = record.final_loss
        row.append("" if loss is None else "%.4f" % loss)
        for scenario in scenarios:
            report = record.report(scenario)
            vals = report.values(metric) if report else []
            row.append("%.2f" % np.median(vals) if vals else "")
        row.append(mfu.to_human_time_str(record.wall_clock))
        rows.append(row)

    return tabulate(
        rows, headers=headers, tablefmt=TABLE_FORMAT, disable_numparse=True)


def summary_table(report):
    '''Renders the corpus summary of a MetricReport.

    Args:
        report (MetricReport): the report

    Returns:
        the table string
    '''
    summary = report.summary()
    rows = []
    for metric, stats in summary.items():
        if not isinstance(stats, dict):
            continue

        rows.append((
            metric, "%.3f" % stats["mean"], "%.3f" % stats["std"],
            "%.3f" % stats["median"], stats["count"]))

    table = tabulate(
        rows, headers=["metric", "mean", "std", "median", "count"],
        tablefmt=TABLE_FORMAT, disable_numparse=True)
    return "%s\n\n%d utterances, %d failed, %d SI-SDR values capped" % (
        table, summary["num_utterances"], summary["num_failed"],
        summary["num_si_sdr_capped"])


def sweep_curve(records, axis, metric="si_sdri", scenario=None):
    '''Aggregates the records of a sweep into a curve: one point per value
    of the axis, holding the median over seeds of each record's corpus
    median.

    Args:
        records (list): a list of ExperimentRecords
        axis (str): the swept hyperparameter
        metric (str, optional): the metric
        scenario (str, optional): the scenario. By default, the first report
            of each record is used

    Returns:
        a list of ``(value, median, count)`` tuples, ordered by first
        appearance of each value
    '''
    points = OrderedDict()
    for record in records:
        if axis not in record.sweep:
            continue

        report = record.report(scenario)
        vals = report.values(metric) if report else []
        if not vals:
            continue

        key = mfu.json_to_str(record.sweep[axis])
        points.setdefault(key, (record.sweep[axis], []))[1].append(
            float(np.median(vals)))

    return [
        (value, float(np.median(meds)), len(meds))
        for value, meds in points.values()]


def write_curve(curve, axis, metric, path):
    '''Writes a sweep curve as JSON.'''
    mfu.write_json(OrderedDict([
        ("axis", axis),
        ("metric", metric),
        ("points", [
            OrderedDict([("value", v), ("median", m), ("count", c)])
            for v, m, c in curve]),
    ]), path)


def plot_curve(curve, axis, metric, path):
    '''Plots a sweep curve as a line plot.'''
    labels = [render_axis_value(v) for v, _, _ in curve]
    medians = [m for _, m, _ in curve]
    numeric = all(isinstance(v, (int, float)) for v, _, _ in curve)
    xs = [v for v, _, _ in curve] if numeric else list(range(len(curve)))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, medians, marker="o")
    if not numeric:
        ax.set_xticks(xs)
        ax.set_xticklabels(labels)
    ax.set_xlabel(axis)
    ax.set_ylabel("median %s" % metric)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()

    mfu.ensure_basedir(path)
    fig.savefig(path)
    plt.close(fig)


def report(records, output_dir, metric="si_sdri", plots=True):
    '''Writes a records table plus a curve file and plot per sweep axis.

    Args:
        records (list): a non-empty list of ExperimentRecords
        output_dir (str): the output directory
        metric (str, optional): the metric to report
        plots (bool, optional): whether to render plots

    Returns:
        the list of written paths
    '''
    table_path = os.path.join(output_dir, TABLE_NAME)
    mfu.write_text(records_table(records, metric=metric) + "\n", table_path)
    paths = [table_path]

    for axis in _sweep_axes(records):
        curve = sweep_curve(records, axis, metric=metric)
        if not curve:
            continue

        curve_path = os.path.join(output_dir, "curve_%s.json" % axis)
        write_curve(curve, axis, metric, curve_path)
        paths.append(curve_path)
        if plots:
            plot_path = os.path.join(output_dir, "curve_%s.png" % axis)
            plot_curve(curve, axis, metric, plot_path)
            paths.append(plot_path)

    logger.info("Report written to '%s'", output_dir)
    return paths


def _sweep_axes(records):
    axes = []
    for record in records:
        for axis in record.sweep:
            if axis not in axes:
                axes.append(axis)

    return axes
