'''
Fixed-step ODE sampling of the learned vector field with classifier-free
guidance.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging

import torch
from torchdiffeq import odeint

import maskflow.core.config as mfcf
import maskflow.flows.flow as mff


logger = logging.getLogger(__name__)


class SamplerMethod(object):
    '''Enumeration of the supported fixed-step solvers.'''

    EULER = "euler"
    MIDPOINT = "midpoint"

    ALL = (EULER, MIDPOINT)


class CFGSign(object):
    '''Enumeration of the supported guidance conventions.

    ``STANDARD_MINUS`` computes ``(1 + a) * v_cond - a * v_uncond``, and
    ``ADDITIVE_PLUS`` computes ``(1 + a) * v_cond + a * v_uncond``.
    '''

    STANDARD_MINUS = "standard_minus"
    ADDITIVE_PLUS = "additive_plus"

    ALL = (STANDARD_MINUS, ADDITIVE_PLUS)


# Model evaluations per solver step
_EVALS_PER_STEP = {SamplerMethod.EULER: 1, SamplerMethod.MIDPOINT: 2}

# Default guidance strength per task
TASK_CFG_ALPHA = {"enhance": 0.5, "separate": 0.7, "synth": 0.7}


class SamplerConfig(mfcf.Config):
    '''Configuration of the ODE sampler.

    Attributes:
        method (str): the solver, one of :class:`SamplerMethod`
        step_size (float): the fixed step size; ``1 / step_size`` must be an
            integer
        cfg_alpha (float): the guidance strength. 0 disables guidance
        cfg_sign (str): the guidance convention, one of :class:`CFGSign`
    '''

    def __init__(
            self, method=SamplerMethod.MIDPOINT, step_size=0.0625,
            cfg_alpha=0.7, cfg_sign=CFGSign.STANDARD_MINUS):
        self.method = method
        self.step_size = float(step_size)
        self.cfg_alpha = float(cfg_alpha)
        self.cfg_sign = cfg_sign
        self.validate()

    @property
    def num_steps(self):
        '''The number of solver steps from ``t = 0`` to ``t = 1``.'''
        return int(round(1.0 / self.step_size))

    @property
    def expected_nfe(self):
        '''The number of model evaluations per sample.'''
        guidance = 2 if self.cfg_alpha > 0 else 1
        return self.num_steps * _EVALS_PER_STEP[self.method] * guidance

    def validate(self):
        mfcf.require(
            self.method in SamplerMethod.ALL,
            "Unsupported sampler method '%s'", self.method)
        mfcf.require(
            self.cfg_sign in CFGSign.ALL,
            "Unsupported guidance sign '%s'", self.cfg_sign)
        mfcf.require(
            0.0 < self.step_size <= 1.0,
            "step_size must be in (0, 1]; found %s", self.step_size)
        mfcf.require(
            abs(1.0 / self.step_size - round(1.0 / self.step_size)) < 1e-6,
            "1 / step_size must be an integer; found step_size %s",
            self.step_size)
        mfcf.require(
            self.cfg_alpha >= 0.0,
            "cfg_alpha must be non-negative; found %s", self.cfg_alpha)

    @classmethod
    def for_task(cls, task_tag, **kwargs):
        '''Returns a config with the default guidance strength of the given
        task.

        Args:
            task_tag (str): the task tag
            **kwargs: other config fields

        Returns:
            a SamplerConfig
        '''
        kwargs.setdefault("cfg_alpha", TASK_CFG_ALPHA.get(task_tag, 0.7))
        return cls(**kwargs)


def guided_field(model, x, t, cond, alpha, sign=CFGSign.STANDARD_MINUS,
                 frame_valid=None):
    '''Evaluates the guided vector field.

    Args:
        model: the vector field model, which must provide ``forward`` and
            ``forward_unconditional``
        x (torch.Tensor): the current state
        t (float or torch.Tensor): the time
        cond (ConditionBundle): the condition
        alpha (float): the guidance strength
        sign (str, optional): the guidance convention
        frame_valid (torch.Tensor, optional): a boolean padding mask

    Returns:
        the guided field, with the same shape as ``x``

    Raises:
        :class:`SamplerError` if ``alpha`` is negative or ``sign`` is unknown
    '''
    if alpha < 0:
        raise SamplerError("Guidance strength must be non-negative")
    if sign not in CFGSign.ALL:
        raise SamplerError("Unsupported guidance sign '%s'" % sign)

    v_cond = model.forward(x, t, cond, frame_valid=frame_valid)
    if alpha == 0:
        return v_cond

    v_uncond = model.forward_unconditional(x, t, frame_valid=frame_valid)
    if sign == CFGSign.STANDARD_MINUS:
        return (1.0 + alpha) * v_cond - alpha * v_uncond

    return (1.0 + alpha) * v_cond + alpha * v_uncond


class SampleResult(object):
    '''The output of :func:`integrate`.

    Attributes:
        x1_hat (torch.Tensor): the estimate of the data point
        nfe (int): the number of model evaluations consumed
    '''

    def __init__(self, x1_hat, nfe):
        self.x1_hat = x1_hat
        self.nfe = nfe


class _CountingField(object):

    def __init__(self, model, cond, cfg, frame_valid):
        self.model = model
        self.cond = cond
        self.cfg = cfg
        self.frame_valid = frame_valid
        self.calls = 0
        self.nfe = 0

    def __call__(self, t, x):
        step = self.calls // _EVALS_PER_STEP[self.cfg.method]
        self.calls += 1
        self.nfe += 2 if self.cfg.cfg_alpha > 0 else 1

        t = torch.clamp(t, 0.0, 1.0)
        v = guided_field(
            self.model, x, t, self.cond, self.cfg.cfg_alpha,
            sign=self.cfg.cfg_sign, frame_valid=self.frame_valid)
        if not torch.isfinite(v).all():
            raise SamplerError("Non-finite vector field", step=step)

        return v


def integrate(model, cond, x0, cfg=None, frame_valid=None):
    '''Integrates the (guided) vector field from ``t = 0`` to ``t = 1`` with
    a fixed-step explicit solver.

    Args:
        model: the vector field model
        cond (ConditionBundle): the condition
        x0 (torch.Tensor): the prior draw
        cfg (SamplerConfig, optional): the sampler config
        frame_valid (torch.Tensor, optional): a boolean padding mask

    Returns:
        a :class:`SampleResult`

    Raises:
        :class:`SamplerError` if the state becomes non-finite
    '''
    cfg = cfg or SamplerConfig()
    func = _CountingField(model, cond, cfg, frame_valid)
    num_steps = cfg.num_steps

    def grid_constructor(func, y0, t):
        return torch.linspace(
            float(t[0]), float(t[-1]), num_steps + 1, dtype=t.dtype,
            device=t.device)

    t = torch.tensor([0.0, 1.0], dtype=x0.dtype, device=x0.device)
    trajectory = odeint(
        func, x0, t, method=cfg.method,
        options={"grid_constructor": grid_constructor})
    x1_hat = trajectory[-1]

    if not torch.isfinite(x1_hat).all():
        raise SamplerError("Non-finite final state", step=num_steps - 1)

    logger.debug("Integrated %d steps with %d NFEs", num_steps, func.nfe)
    return SampleResult(x1_hat, func.nfe)


def sample_task(model, task_cond, length, generator, cfg=None,
                frame_valid=None):
    '''Draws a prior sample of the given length and integrates it to a Mel
    spectrogram estimate.

    Args:
        model: the vector field model
        task_cond (ConditionBundle): the task condition
        length (int): the number of frames
        generator (torch.Generator): the random generator
        cfg (SamplerConfig, optional): the sampler config
        frame_valid (torch.Tensor, optional): a boolean padding mask

    Returns:
        a ``[length, d_feat]`` (or batched) tensor
    '''
    if len(task_cond) != length:
        raise SamplerError(
            "Condition has %d frames but %d were requested"
            % (len(task_cond), length))

    d_feat = model.model_config.d_feat
    shape = tuple(task_cond.cond_frames.shape[:-1]) + (d_feat,)
    param = next(model.parameters())
    x0 = mff.sample_prior(shape, generator, dtype=param.dtype).to(
        param.device)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            result = integrate(
                model, task_cond.to(param.device), x0, cfg=cfg,
                frame_valid=frame_valid)
    finally:
        model.train(was_training)

    return result.x1_hat


class SamplerError(mfcf.NumericalError):
    '''Exception raised when ODE sampling fails.'''
    pass
