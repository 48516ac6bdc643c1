'''
The masking policy used to build partially hidden audio conditions.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging
import math

import numpy as np
import torch

import maskflow.core.config as mfcf


logger = logging.getLogger(__name__)


class MaskPolicy(mfcf.Config):
    '''The pretraining masking policy.

    Attributes:
        p_cond (float): the probability that the model receives a partially
            masked condition rather than a fully masked one
        n_mask_range (tuple): the ``(lo, hi)`` interval from which the masked
            fraction is drawn uniformly
        l_mask (int): the minimum length of a masked span, in frames
    '''

    def __init__(self, p_cond=0.9, n_mask_range=(0.7, 1.0), l_mask=10):
        self.p_cond = float(p_cond)
        self.n_mask_range = tuple(float(v) for v in n_mask_range)
        self.l_mask = int(l_mask)
        self.validate()

    @property
    def p_drop(self):
        '''The probability of a fully masked condition, ``1 - p_cond``.'''
        return 1.0 - self.p_cond

    def validate(self):
        mfcf.require(
            0.0 <= self.p_cond <= 1.0,
            "p_cond must be in [0, 1]; found %s", self.p_cond)
        mfcf.require(
            len(self.n_mask_range) == 2,
            "n_mask_range must have two entries; found %s",
            self.n_mask_range)
        lo, hi = self.n_mask_range
        mfcf.require(
            0.0 <= lo <= hi <= 1.0,
            "n_mask_range must satisfy 0 <= lo <= hi <= 1; found %s",
            self.n_mask_range)
        mfcf.require(
            self.l_mask >= 1, "l_mask must be positive; found %d",
            self.l_mask)


class MaskPlan(object):
    '''A per-frame mask realizing the masking policy.

    Attributes:
        frame_mask (numpy.ndarray): a boolean vector of length L that is True
            on masked (hidden) frames
        fully_masked (bool): whether the whole condition is hidden
    '''

    def __init__(self, frame_mask, fully_masked=False):
        frame_mask = np.asarray(frame_mask, dtype=bool)
        if frame_mask.ndim != 1:
            raise MaskError(
                "Frame masks must be vectors; found shape %s"
                % (frame_mask.shape,))
        if fully_masked and not frame_mask.all():
            raise MaskError("A fully masked plan must mask every frame")

        self.frame_mask = frame_mask
        self.fully_masked = bool(fully_masked)

    def __len__(self):
        return len(self.frame_mask)

    @property
    def num_masked(self):
        '''The number of masked frames.'''
        return int(self.frame_mask.sum())

    @property
    def masked_fraction(self):
        '''The fraction of masked frames.'''
        return self.num_masked / len(self)

    @property
    def visible(self):
        '''The complement of :attr:`frame_mask`.'''
        return ~self.frame_mask

    def runs(self):
        '''Returns the maximal masked runs.

        Returns:
            a list of ``(start, stop)`` half-open frame intervals
        '''
        padded = np.concatenate(([False], self.frame_mask, [False]))
        edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
        return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def sample_mask_plan(L, policy, rng):
    '''Samples a mask plan for a sequence of ``L`` frames.

    With probability ``1 - p_cond`` every frame is masked. Otherwise a masked
    fraction is drawn uniformly from ``n_mask_range`` and realized as
    non-overlapping spans of at least ``l_mask`` frames placed uniformly at
    random. Sequences shorter than ``l_mask`` are fully masked.

    Args:
        L (int): the number of frames
        policy (MaskPolicy): the masking policy
        rng (numpy.random.Generator): the random generator

    Returns:
        a :class:`MaskPlan`
    '''
    if L < 1:
        raise MaskError("Cannot mask an empty sequence")

    if rng.random() >= policy.p_cond:
        return full_mask_plan(L)

    lo, hi = policy.n_mask_range
    target = rng.uniform(lo, hi)

    if L < policy.l_mask:
        return MaskPlan(np.ones(L, dtype=bool), fully_masked=False)

    count = int(round(target * L))
    count = min(max(count, int(math.ceil(lo * L))), int(math.floor(hi * L)))
    if 0 < count < policy.l_mask:
        count = policy.l_mask

    return MaskPlan(_place_spans(L, count, policy.l_mask, rng))


def _place_spans(L, count, l_mask, rng):
    frame_mask = np.zeros(L, dtype=bool)
    if count == 0:
        return frame_mask
    if count >= L:
        frame_mask[:] = True
        return frame_mask

    num_gaps_free = L - count
    max_spans = min(count // l_mask, num_gaps_free + 1)
    num_spans = int(rng.integers(1, max_spans + 1))

    # Span lengths: l_mask each, plus a random share of the surplus
    surplus = count - num_spans * l_mask
    lengths = l_mask + rng.multinomial(surplus, np.ones(num_spans) / num_spans)

    # Gaps: the (num_spans - 1) interior gaps need at least one frame each
    interior = num_spans - 1
    free = num_gaps_free - interior
    gaps = rng.multinomial(free, np.ones(num_spans + 1) / (num_spans + 1))
    gaps[1:-1] += 1

    pos = int(gaps[0])
    for length, gap in zip(lengths, gaps[1:]):
        frame_mask[pos:pos + length] = True
        pos += int(length) + int(gap)

    return frame_mask


def full_mask_plan(L):
    '''Returns a plan that hides every frame.'''
    return MaskPlan(np.ones(L, dtype=bool), fully_masked=True)


def empty_mask_plan(L):
    '''Returns a plan that hides no frame.'''
    return MaskPlan(np.zeros(L, dtype=bool), fully_masked=False)


def prefix_mask_plan(L, n_prefix):
    '''Returns a plan that keeps the first ``n_prefix`` frames visible and
    hides the rest.

    Args:
        L (int): the number of frames
        n_prefix (int): the number of visible leading frames

    Returns:
        a :class:`MaskPlan`
    '''
    if not 0 <= n_prefix <= L:
        raise MaskError(
            "Prefix length must be in [0, %d]; found %d" % (L, n_prefix))

    frame_mask = np.ones(L, dtype=bool)
    frame_mask[:n_prefix] = False
    return MaskPlan(frame_mask, fully_masked=(n_prefix == 0))


def apply_mask(x1, plan):
    '''Zero-fills the masked frames of the given features.

    Args:
        x1 (torch.Tensor): a ``[L, d]`` feature tensor
        plan (MaskPlan): the mask plan

    Returns:
        a new ``[L, d]`` tensor whose masked frames are exactly zero and whose
        unmasked frames equal ``x1``

    Raises:
        :class:`MaskError` if the plan length does not match
    '''
    if x1.shape[0] != len(plan):
        raise MaskError(
            "Plan covers %d frames but the input has %d"
            % (len(plan), x1.shape[0]))

    hidden = torch.from_numpy(plan.frame_mask).to(x1.device).unsqueeze(-1)
    return torch.where(hidden, torch.zeros_like(x1), x1)


class MaskError(Exception):
    '''Exception raised when a mask plan cannot be built or applied.'''
    pass
