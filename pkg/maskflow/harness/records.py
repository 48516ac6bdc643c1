'''
Experiment records.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import datetime
import logging
import math

import maskflow.audio.metrics as mfm
import maskflow.core.config as mfcf
import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


class ExperimentRecord(mfu.Serializable):
    '''The outcome of a training and/or evaluation run.

    Attributes:
        name (str): the run name
        config (dict): a snapshot of the configs of the run
        loss_curve (list): a list of ``[step, loss]`` pairs
        checkpoints (list): the checkpoint paths written by the run
        reports (list): a list of :class:`MetricReport`
        wall_clock (float): the wall-clock duration, in seconds
        sweep (dict): the swept hyperparameter values of the run, if any
        created_at (str): the ISO 8601 creation time
    '''

    def __init__(self, name, config=None, loss_curve=None, checkpoints=None,
                 reports=None, wall_clock=0.0, sweep=None, created_at=None):
        self.name = name
        self.config = OrderedDict(config or {})
        self.loss_curve = [[int(s), float(l)] for s, l in loss_curve or []]
        self.checkpoints = list(checkpoints or [])
        self.reports = list(reports or [])
        self.wall_clock = float(wall_clock)
        self.sweep = OrderedDict(sweep or {})
        self.created_at = created_at or datetime.datetime.now(
            datetime.timezone.utc).isoformat()
        self.validate()

    def validate(self):
        '''Checks that every recorded loss is finite.

        Raises:
            :class:`maskflow.core.config.NumericalError` if a loss is not
            finite
        '''
        for step, loss in self.loss_curve:
            if not math.isfinite(loss):
                raise mfcf.NumericalError(
                    "Recorded loss %s is not finite" % loss, step=step)

    @property
    def final_loss(self):
        '''The last recorded loss, or None.'''
        return self.loss_curve[-1][1] if self.loss_curve else None

    def report(self, scenario=None):
        '''Returns the first metric report of the given scenario (or the
        first report), or None.
        '''
        for r in self.reports:
            if scenario is None or r.scenario == scenario:
                return r

        return None

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"], config=d.get("config", None),
            loss_curve=d.get("loss_curve", None),
            checkpoints=d.get("checkpoints", None),
            reports=[
                mfm.MetricReport.from_dict(r) for r in d.get("reports", [])],
            wall_clock=d.get("wall_clock", 0.0),
            sweep=d.get("sweep", None),
            created_at=d.get("created_at", None))
