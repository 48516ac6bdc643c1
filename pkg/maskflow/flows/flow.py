'''
Optimal-transport conditional probability paths and flow-matching losses.

All operations accept either single sequences of shape ``[L, d]`` or batches
of shape ``[B, L, d]``. Batches use one time value per sequence.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging
import numbers

import torch

import maskflow.core.config as mfcf


logger = logging.getLogger(__name__)


DEFAULT_SIGMA_MIN = 1e-5


class FlowPathConfig(mfcf.Config):
    '''Configuration of the optimal-transport conditional path.

    Attributes:
        sigma_min (float): the standard deviation of the path at ``t = 1``
    '''

    def __init__(self, sigma_min=DEFAULT_SIGMA_MIN):
        self.sigma_min = float(sigma_min)
        self.validate()

    def validate(self):
        mfcf.require(
            0.0 <= self.sigma_min < 1.0,
            "sigma_min must be in [0, 1); found %s", self.sigma_min)


class FlowSample(object):
    '''A single training draw along the conditional path.

    Attributes:
        t (torch.Tensor): the time, a scalar or a ``[B]`` tensor
        x0 (torch.Tensor): the prior draw
        x1 (torch.Tensor): the data point
        x_t (torch.Tensor): the path point
        u_target (torch.Tensor): the regression target
    '''

    def __init__(self, t, x0, x1, x_t, u_target):
        self.t = t
        self.x0 = x0
        self.x1 = x1
        self.x_t = x_t
        self.u_target = u_target

    @classmethod
    def draw(cls, x1, cfg=None, generator=None):
        '''Draws a prior sample and a time for the given data and builds the
        corresponding path point and target.

        Args:
            x1 (torch.Tensor): a ``[L, d]`` or ``[B, L, d]`` data tensor
            cfg (FlowPathConfig, optional): the path config
            generator (torch.Generator, optional): the random generator

        Returns:
            a FlowSample
        '''
        cfg = cfg or FlowPathConfig()
        x0 = sample_prior(
            x1.shape, generator, dtype=x1.dtype, device=x1.device)
        batch_shape = (x1.shape[0],) if x1.dim() == 3 else ()
        t = sample_time(
            batch_shape, generator, dtype=x1.dtype, device=x1.device)
        return cls(
            t, x0, x1, path_point(x0, x1, t, cfg), target_field(x0, x1, cfg))


def path_point(x0, x1, t, cfg=None):
    '''Evaluates the conditional flow at time ``t``.

    ``x_t = (1 - (1 - sigma_min) * t) * x0 + t * x1``

    Args:
        x0 (torch.Tensor): the prior draw
        x1 (torch.Tensor): the data point
        t (float or torch.Tensor): the time in [0, 1]; a scalar, or a ``[B]``
            tensor for batched inputs
        cfg (FlowPathConfig, optional): the path config

    Returns:
        the path point, with the same shape as ``x0``

    Raises:
        :class:`FlowError` if the shapes differ or ``t`` is out of range
    '''
    cfg = cfg or FlowPathConfig()
    _check_shapes(x0, x1)
    t = _broadcast_time(t, x0)
    return (1.0 - (1.0 - cfg.sigma_min) * t) * x0 + t * x1


def target_field(x0, x1, cfg=None):
    '''Computes the conditional target vector field, which is constant in
    time along the optimal-transport path.

    ``u = x1 - (1 - sigma_min) * x0``

    Args:
        x0 (torch.Tensor): the prior draw
        x1 (torch.Tensor): the data point
        cfg (FlowPathConfig, optional): the path config

    Returns:
        the target field, with the same shape as ``x0``

    Raises:
        :class:`FlowError` if the shapes differ
    '''
    cfg = cfg or FlowPathConfig()
    _check_shapes(x0, x1)
    return x1 - (1.0 - cfg.sigma_min) * x0


def cfm_pretrain_loss(pred_field, u_target, mask, valid=None):
    '''Computes the masked-condition pretraining loss: the mean squared error
    over the masked frames only.

    Args:
        pred_field (torch.Tensor): the predicted field, ``[L, d]`` or
            ``[B, L, d]``
        u_target (torch.Tensor): the target field
        mask (torch.Tensor or numpy.ndarray): a per-frame boolean mask that is
            True on masked frames, ``[L]`` or ``[B, L]``
        valid (torch.Tensor, optional): a per-frame boolean mask that is False
            on padding frames of a batch

    Returns:
        a scalar tensor

    Raises:
        :class:`FlowError` if no frame is selected
    '''
    return _masked_mse(pred_field, u_target, mask, valid, "mask")


def cfm_finetune_loss(pred_field, u_target, loss_region, valid=None):
    '''Computes the fine-tuning loss: the mean squared error over the frames
    of the loss region.

    Args:
        pred_field (torch.Tensor): the predicted field, ``[L, d]`` or
            ``[B, L, d]``
        u_target (torch.Tensor): the target field
        loss_region (torch.Tensor or numpy.ndarray): a per-frame boolean
            region, ``[L]`` or ``[B, L]``
        valid (torch.Tensor, optional): a per-frame boolean mask that is False
            on padding frames of a batch

    Returns:
        a scalar tensor

    Raises:
        :class:`FlowError` if no frame is selected
    '''
    return _masked_mse(pred_field, u_target, loss_region, valid, "loss region")


def sample_prior(shape, generator=None, dtype=torch.float32, device=None):
    '''Draws i.i.d. standard normal entries.

    Args:
        shape (tuple): the desired shape
        generator (torch.Generator, optional): the random generator
        dtype (torch.dtype, optional): the dtype
        device (torch.device, optional): the device

    Returns:
        a tensor of the given shape
    '''
    return torch.randn(
        tuple(shape), generator=generator, dtype=dtype, device=device)


def sample_time(batch_shape=(), generator=None, dtype=torch.float32,
                device=None):
    '''Draws times uniformly from [0, 1], one per sequence.

    Args:
        batch_shape (tuple, optional): ``()`` for a scalar time or ``(B,)``
        generator (torch.Generator, optional): the random generator
        dtype (torch.dtype, optional): the dtype
        device (torch.device, optional): the device

    Returns:
        a tensor of shape ``batch_shape``
    '''
    return torch.rand(
        tuple(batch_shape), generator=generator, dtype=dtype, device=device)


def make_generator(seed):
    '''Returns a CPU ``torch.Generator`` seeded with the given value.'''
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def _masked_mse(pred, target, region, valid, name):
    _check_shapes(pred, target)
    region = torch.as_tensor(region, dtype=torch.bool, device=pred.device)
    if region.shape != pred.shape[:-1]:
        raise FlowError(
            "The %s has shape %s but the field has %d frames"
            % (name, tuple(region.shape), pred.shape[-2]))

    if valid is not None:
        valid = torch.as_tensor(valid, dtype=torch.bool, device=pred.device)
        region = region & valid

    num_frames = int(region.sum())
    if num_frames == 0:
        raise FlowError("The %s selects no frames" % name)

    per_frame = ((pred - target) ** 2).mean(dim=-1)
    return per_frame[region].sum() / num_frames


def _broadcast_time(t, x):
    if isinstance(t, numbers.Number):
        if not 0.0 <= t <= 1.0:
            raise FlowError("t must be in [0, 1]; found %s" % t)
        return t

    t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
    if t.numel() and (t.min() < 0 or t.max() > 1):
        raise FlowError(
            "t must be in [0, 1]; found range [%s, %s]"
            % (float(t.min()), float(t.max())))

    if t.dim() == 0:
        return t
    if t.dim() == 1 and x.dim() == 3 and t.shape[0] == x.shape[0]:
        return t.view(-1, 1, 1)

    raise FlowError(
        "Expected one time per sequence; found t of shape %s for input of "
        "shape %s" % (tuple(t.shape), tuple(x.shape)))


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise FlowError(
            "Shape mismatch: %s vs %s" % (tuple(a.shape), tuple(b.shape)))


class FlowError(Exception):
    '''Exception raised when a flow-matching operation receives invalid
    inputs.
    '''
    pass
