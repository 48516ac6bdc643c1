'''
The transformer vector field estimator.

The model consumes the noisy path point concatenated with the condition
features along the frequency axis, appends a time token, and runs a pre-norm
transformer encoder with ALiBi attention bias, a convolutional positional
embedding and optional U-Net style skip connections.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import logging
import math
import numbers

from einops import rearrange
import peft
import torch
from torch import nn
import torch.nn.functional as F

import maskflow.constants as mfc
import maskflow.core.config as mfcf
import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


CHECKPOINT_FORMAT_VERSION = 1

LORA_TARGET_MODULES = ["q_proj", "k_proj", "v_proj"]

# Symbol id marking frames without an aligned symbol
NO_SYMBOL = -1

_ALIBI_BIAS_MAX = 8
_TIME_SCALE = 1000.0


class VectorFieldModelConfig(mfcf.Config):
    '''Architecture hyperparameters of the vector field model.

    Attributes:
        n_layers (int): the number of transformer blocks
        n_heads (int): the number of attention heads
        d_model (int): the hidden size
        d_ffn (int): the feed-forward hidden size
        d_feat (int): the number of feature bins of the data
        d_cond (int): the number of condition bins. By default, ``d_feat``
        use_skip_connections (bool): whether to pair layer ``i`` with layer
            ``n_layers - 1 - i`` through concatenating skip connections
        conv_pos_kernel (int): the kernel size of the convolutional
            positional embedding
        conv_pos_groups (int): the number of groups of the convolutional
            positional embedding
        alibi (bool): whether to add the ALiBi attention bias
        lora_rank (int): the rank of the attached low-rank adaptors, if any
        symbol_vocab_size (int): the size of the aligned-symbol vocabulary,
            if symbol conditioning is enabled
    '''

    def __init__(
            self, n_layers=4, n_heads=4, d_model=256, d_ffn=1024,
            d_feat=mfc.N_MELS, d_cond=None, use_skip_connections=True,
            conv_pos_kernel=31, conv_pos_groups=16, alibi=True,
            lora_rank=None, symbol_vocab_size=None):
        self.n_layers = int(n_layers)
        self.n_heads = int(n_heads)
        self.d_model = int(d_model)
        self.d_ffn = int(d_ffn)
        self.d_feat = int(d_feat)
        self.d_cond = int(d_cond) if d_cond is not None else None
        self.use_skip_connections = bool(use_skip_connections)
        self.conv_pos_kernel = int(conv_pos_kernel)
        self.conv_pos_groups = int(conv_pos_groups)
        self.alibi = bool(alibi)
        self.lora_rank = int(lora_rank) if lora_rank is not None else None
        self.symbol_vocab_size = (
            int(symbol_vocab_size) if symbol_vocab_size is not None
            else None)
        self.validate()

    @property
    def cond_dim(self):
        '''The number of condition bins.'''
        return self.d_cond if self.d_cond is not None else self.d_feat

    def validate(self):
        mfcf.require(self.n_layers >= 1, "n_layers must be positive")
        mfcf.require(self.n_heads >= 1, "n_heads must be positive")
        mfcf.require(
            self.d_model % self.n_heads == 0,
            "d_model (%d) must be divisible by n_heads (%d)",
            self.d_model, self.n_heads)
        mfcf.require(
            not self.use_skip_connections or self.n_layers % 2 == 0,
            "n_layers must be even when skip connections are used; found %d",
            self.n_layers)
        mfcf.require(
            self.conv_pos_kernel >= 1 and self.conv_pos_kernel % 2 == 1,
            "conv_pos_kernel must be a positive odd integer; found %d",
            self.conv_pos_kernel)
        mfcf.require(
            self.conv_pos_groups >= 1
            and self.d_model % self.conv_pos_groups == 0,
            "d_model (%d) must be divisible by conv_pos_groups (%d)",
            self.d_model, self.conv_pos_groups)
        mfcf.require(
            self.d_ffn >= 1 and self.d_feat >= 1 and self.cond_dim >= 1,
            "d_ffn, d_feat and d_cond must be positive")
        mfcf.require(
            self.lora_rank is None or self.lora_rank >= 1,
            "lora_rank must be positive; found %s", self.lora_rank)
        mfcf.require(
            self.symbol_vocab_size is None or self.symbol_vocab_size >= 1,
            "symbol_vocab_size must be positive; found %s",
            self.symbol_vocab_size)


def full_scale_config(**kwargs):
    '''Returns the full-scale configuration: 24 layers, 16 heads, a hidden
    size of 1024 and a feed-forward size of 4096.
    '''
    d = dict(n_layers=24, n_heads=16, d_model=1024, d_ffn=4096)
    d.update(kwargs)
    return VectorFieldModelConfig(**d)


def desk_config(**kwargs):
    '''Returns the desk-scale configuration: 4 layers, 4 heads, a hidden size
    of 256 and a feed-forward size of 1024.
    '''
    d = dict(n_layers=4, n_heads=4, d_model=256, d_ffn=1024)
    d.update(kwargs)
    return VectorFieldModelConfig(**d)


class ConditionBundle(object):
    '''The conditioning input of the vector field model.

    Attributes:
        cond_frames (torch.Tensor): a ``[L, d_cond]`` or ``[B, L, d_cond]``
            condition tensor
        symbol_ids (torch.Tensor): an optional ``[L]`` or ``[B, L]`` tensor of
            frame-aligned symbol ids
        cond_dropped (bool): whether this is an unconditional pass
    '''

    def __init__(self, cond_frames, symbol_ids=None, cond_dropped=False):
        self.cond_frames = cond_frames
        self.symbol_ids = symbol_ids
        self.cond_dropped = bool(cond_dropped)

        if symbol_ids is not None and (
                tuple(symbol_ids.shape) != tuple(cond_frames.shape[:-1])):
            raise ModelError(
                "Symbol ids of shape %s are not aligned with condition "
                "frames of shape %s"
                % (tuple(symbol_ids.shape), tuple(cond_frames.shape)))

    def __len__(self):
        return self.cond_frames.shape[-2]

    @classmethod
    def zeros(cls, shape, dtype=torch.float32, device=None):
        '''Builds a dropped bundle of all-zero condition frames.

        Args:
            shape (tuple): the condition shape
            dtype (torch.dtype, optional): the dtype
            device (torch.device, optional): the device

        Returns:
            a ConditionBundle
        '''
        return cls(
            torch.zeros(shape, dtype=dtype, device=device), cond_dropped=True)

    def dropped(self):
        '''Returns the unconditional counterpart of this bundle: zero
        condition frames and no symbols.
        '''
        return ConditionBundle.zeros(
            self.cond_frames.shape, dtype=self.cond_frames.dtype,
            device=self.cond_frames.device)

    def to(self, device):
        '''Moves the bundle to the given device.'''
        ids = self.symbol_ids
        return ConditionBundle(
            self.cond_frames.to(device),
            symbol_ids=ids.to(device) if ids is not None else None,
            cond_dropped=self.cond_dropped)


def alibi_slopes(n_heads, alibi_bias_max=_ALIBI_BIAS_MAX):
    '''Returns the geometric per-head ALiBi slopes.

    Args:
        n_heads (int): the number of heads
        alibi_bias_max (int, optional): the exponent range of the schedule

    Returns:
        a ``[n_heads]`` tensor
    '''
    n = 2 ** math.ceil(math.log2(n_heads))
    m = torch.arange(1, n + 1, dtype=torch.float32) * (alibi_bias_max / n)
    slopes = 1.0 / torch.pow(2.0, m)
    if n != n_heads:
        slopes = torch.cat([slopes[1::2], slopes[::2]])[:n_heads]

    return slopes


class SinusoidalTimeEmbedding(nn.Module):
    '''Sinusoidal embedding of the flow time with a learnable scale.'''

    def __init__(self, d_model):
        super(SinusoidalTimeEmbedding, self).__init__()
        half = d_model // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float32)
            / max(half, 1))
        self.register_buffer("freqs", freqs, persistent=False)
        self.scale = nn.Parameter(torch.ones(()))
        self.d_model = d_model

    def forward(self, t):
        args = _TIME_SCALE * t.unsqueeze(-1) * self.freqs.to(t.dtype)
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        if emb.shape[-1] < self.d_model:
            emb = F.pad(emb, (0, self.d_model - emb.shape[-1]))

        return self.scale * emb


class ConvPositionalEmbedding(nn.Module):
    '''Grouped 1-D convolution over time whose output is added to the
    sequence.
    '''

    def __init__(self, d_model, kernel_size, groups):
        super(ConvPositionalEmbedding, self).__init__()
        self.conv = nn.Conv1d(
            d_model, d_model, kernel_size, padding=kernel_size // 2,
            groups=groups)

    def forward(self, h):
        y = self.conv(rearrange(h, "b l d -> b d l"))
        return rearrange(F.gelu(y), "b d l -> b l d")


class SelfAttention(nn.Module):
    '''Multi-head self-attention with an additive bias.'''

    def __init__(self, d_model, n_heads):
        super(SelfAttention, self).__init__()
        self.n_heads = n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, h, bias):
        q, k, v = (
            rearrange(proj(h), "b l (h e) -> b h l e", h=self.n_heads)
            for proj in (self.q_proj, self.k_proj, self.v_proj))
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=bias)
        return self.out_proj(rearrange(y, "b h l e -> b l (h e)"))


class TransformerBlock(nn.Module):
    '''A pre-norm transformer encoder block.'''

    def __init__(self, d_model, n_heads, d_ffn):
        super(TransformerBlock, self).__init__()
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.ffn_norm = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, d_ffn), nn.GELU(), nn.Linear(d_ffn, d_model))

    def forward(self, h, bias):
        h = h + self.attn(self.attn_norm(h), bias)
        return h + self.ffn(self.ffn_norm(h))


class VectorFieldModel(nn.Module):
    '''The learnable vector field ``v_t(x_t, condition)``.

    Attributes:
        model_config (VectorFieldModelConfig): the architecture config
    '''

    def __init__(self, model_config=None):
        super(VectorFieldModel, self).__init__()
        model_config = model_config or desk_config()
        self.model_config = model_config.replace(lora_rank=None)
        cfg = self.model_config

        self.input_proj = nn.Linear(cfg.d_feat + cfg.cond_dim, cfg.d_model)
        self.symbol_embedding = None
        self.symbol_gate = None
        self.time_embedding = SinusoidalTimeEmbedding(cfg.d_model)
        self.conv_pos = ConvPositionalEmbedding(
            cfg.d_model, cfg.conv_pos_kernel, cfg.conv_pos_groups)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d_model, cfg.n_heads, cfg.d_ffn)
            for _ in range(cfg.n_layers))
        if cfg.use_skip_connections:
            self.skip_projs = nn.ModuleList(
                nn.Linear(2 * cfg.d_model, cfg.d_model)
                for _ in range(cfg.n_layers // 2))
        else:
            self.skip_projs = None
        self.final_norm = nn.LayerNorm(cfg.d_model)
        self.output_head = nn.Linear(cfg.d_model, cfg.d_feat)
        self.register_buffer(
            "slopes", alibi_slopes(cfg.n_heads), persistent=False)

        if model_config.symbol_vocab_size is not None:
            self.enable_symbol_conditioning(model_config.symbol_vocab_size)

        if model_config.lora_rank is not None:
            apply_lora(self, model_config.lora_rank)

    def skip_pairs(self):
        '''Returns the ``(earlier, later)`` layer pairs joined by skip
        connections.
        '''
        if not self.model_config.use_skip_connections:
            return []

        n = self.model_config.n_layers
        return [(i, n - 1 - i) for i in range(n // 2)]

    def enable_symbol_conditioning(self, vocab_size):
        '''Attaches a frame-aligned symbol embedding behind a zero-initialized
        scalar gate, so that the model output is unchanged until the gate is
        trained.

        Args:
            vocab_size (int): the number of distinct symbol ids
        '''
        cfg = self.model_config
        device = self.input_proj.weight.device
        self.symbol_embedding = nn.Embedding(vocab_size, cfg.d_model).to(
            device)
        self.symbol_gate = nn.Parameter(torch.zeros((), device=device))
        self.model_config = cfg.replace(symbol_vocab_size=vocab_size)

    def forward(self, x_t, t, cond, frame_valid=None):
        '''Evaluates the vector field.

        Args:
            x_t (torch.Tensor): the ``[L, d]`` or ``[B, L, d]`` path point
            t (float or torch.Tensor): the time in [0, 1]; a scalar or one
                value per sequence
            cond (ConditionBundle): the condition
            frame_valid (torch.Tensor, optional): a ``[B, L]`` boolean tensor
                that is False on padding frames

        Returns:
            a tensor with the same shape as ``x_t``

        Raises:
            :class:`ModelError` if the inputs are inconsistent
        '''
        cfg = self.model_config
        single = x_t.dim() == 2
        x = x_t.unsqueeze(0) if single else x_t
        cond_frames = cond.cond_frames
        symbol_ids = cond.symbol_ids
        if single:
            cond_frames = cond_frames.unsqueeze(0)
            if symbol_ids is not None:
                symbol_ids = symbol_ids.unsqueeze(0)

        B, L, d = x.shape
        if d != cfg.d_feat:
            raise ModelError("Expected %d feature bins; found %d" % (
                cfg.d_feat, d))
        if tuple(cond_frames.shape) != (B, L, cfg.cond_dim):
            raise ModelError(
                "Condition of shape %s does not match input of shape %s"
                % (tuple(cond.cond_frames.shape), tuple(x_t.shape)))

        t = self._prepare_time(t, B, x)
        if frame_valid is None:
            valid = torch.ones(B, L, dtype=torch.bool, device=x.device)
        else:
            valid = torch.as_tensor(
                frame_valid, dtype=torch.bool, device=x.device).view(B, L)

        h = self.input_proj(torch.cat([x, cond_frames.to(x.dtype)], dim=-1))
        if symbol_ids is not None:
            h = h + self._embed_symbols(symbol_ids)

        h = h * valid.unsqueeze(-1).to(h.dtype)
        h = h + self.conv_pos(h)
        h = torch.cat([h, self.time_embedding(t).unsqueeze(1)], dim=1)

        bias = self._attention_bias(valid, h.dtype)
        n = cfg.n_layers
        skips = []
        for i, block in enumerate(self.blocks):
            if self.skip_projs is not None and i >= n // 2:
                h = self.skip_projs[i - n // 2](
                    torch.cat([h, skips.pop()], dim=-1))

            h = block(h, bias)

            if self.skip_projs is not None and i < n // 2:
                skips.append(h)

        v = self.output_head(self.final_norm(h[:, :L]))
        return v[0] if single else v

    def forward_unconditional(self, x_t, t, frame_valid=None):
        '''Evaluates the vector field with an all-zero condition and no
        symbols.

        Args:
            x_t (torch.Tensor): the ``[L, d]`` or ``[B, L, d]`` path point
            t (float or torch.Tensor): the time in [0, 1]
            frame_valid (torch.Tensor, optional): a ``[B, L]`` boolean tensor
                that is False on padding frames

        Returns:
            a tensor with the same shape as ``x_t``
        '''
        shape = tuple(x_t.shape[:-1]) + (self.model_config.cond_dim,)
        cond = ConditionBundle.zeros(shape, dtype=x_t.dtype, device=x_t.device)
        return self.forward(x_t, t, cond, frame_valid=frame_valid)

    def _prepare_time(self, t, batch_size, x):
        if isinstance(t, numbers.Number):
            t = torch.full((batch_size,), float(t), dtype=x.dtype)
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
        if t.dim() == 0:
            t = t.expand(batch_size)
        if tuple(t.shape) != (batch_size,):
            raise ModelError(
                "Expected a scalar time or one per sequence; found shape %s"
                % (tuple(t.shape),))
        if bool((t < 0).any()) or bool((t > 1).any()):
            raise ModelError("t must be in [0, 1]")

        return t.to(x.device)

    def _embed_symbols(self, symbol_ids):
        if self.symbol_embedding is None:
            raise ModelError(
                "Symbol ids were provided but symbol conditioning is not "
                "enabled")

        symbol_ids = symbol_ids.long().to(self.input_proj.weight.device)
        vocab_size = self.symbol_embedding.num_embeddings
        if symbol_ids.numel() and (
                int(symbol_ids.min()) < NO_SYMBOL
                or int(symbol_ids.max()) >= vocab_size):
            raise ModelError(
                "Symbol ids must be in [0, %d); found range [%d, %d]"
                % (vocab_size, int(symbol_ids.min()), int(symbol_ids.max())))

        # Frames marked NO_SYMBOL receive no embedding
        present = (symbol_ids != NO_SYMBOL).unsqueeze(-1)
        emb = self.symbol_embedding(symbol_ids.clamp(min=0))
        return self.symbol_gate * (emb * present.to(emb.dtype))

    def _attention_bias(self, valid, dtype):
        B, L = valid.shape
        device = valid.device
        num_valid = valid.sum(dim=1)

        # The time token sits after the last valid frame
        frame_pos = torch.arange(L, device=device).expand(B, L)
        pos = torch.cat([frame_pos, num_valid.unsqueeze(1)], dim=1).to(dtype)
        key_valid = torch.cat(
            [valid, torch.ones(B, 1, dtype=torch.bool, device=device)], dim=1)

        bias = torch.zeros(B, 1, L + 1, L + 1, dtype=dtype, device=device)
        if self.model_config.alibi:
            dist = (pos.unsqueeze(2) - pos.unsqueeze(1)).abs().unsqueeze(1)
            slopes = self.slopes.to(device=device, dtype=dtype)
            bias = -dist * slopes.view(1, -1, 1, 1)

        return bias.masked_fill(
            ~key_valid.view(B, 1, 1, L + 1), float("-inf"))


def apply_lora(model, rank):
    '''Attaches zero-initialized low-rank adaptors to the query, key and value
    projections of every attention layer and freezes all other weights except
    the symbol embedding and its gate.

    Args:
        model (VectorFieldModel): the model, modified in place
        rank (int): the adaptor rank

    Returns:
        the model

    Raises:
        :class:`ModelError` if the rank is invalid or adaptors are already
        attached
    '''
    d_model = model.model_config.d_model
    if rank < 1 or rank > d_model:
        raise ModelError(
            "LoRA rank must be in [1, %d]; found %d" % (d_model, rank))
    if model.model_config.lora_rank is not None:
        raise ModelError("LoRA adaptors are already attached")

    lora_config = peft.LoraConfig(
        r=rank, lora_alpha=rank, lora_dropout=0.0, bias="none",
        target_modules=LORA_TARGET_MODULES)
    peft.inject_adapter_in_model(lora_config, model)

    for name, param in model.named_parameters():
        param.requires_grad = _is_adaptable(name)

    model.model_config = model.model_config.replace(lora_rank=rank)
    logger.info(
        "Attached rank-%d adaptors; %s of %s parameters are trainable",
        rank, mfu.to_human_decimal_str(count_trainable_parameters(model)),
        mfu.to_human_decimal_str(
            sum(p.numel() for p in model.parameters())))
    return model


def _is_adaptable(name):
    return "lora_" in name or name.startswith("symbol_")


def trainable_parameters(model):
    '''Returns the parameters of the model that require gradients.'''
    return [p for p in model.parameters() if p.requires_grad]


def count_trainable_parameters(model):
    '''Returns the number of scalar parameters that require gradients.'''
    return sum(p.numel() for p in trainable_parameters(model))


def frozen_parameters_digest(model):
    '''Returns a digest of all parameters that do not require gradients.'''
    return mfu.hash_tensors(
        (name, p) for name, p in model.named_parameters()
        if not p.requires_grad)


def count_parameters(config):
    '''Computes the exact number of learnable parameters of a model built
    from the given config, including attached adaptors and symbol
    embeddings.

    Args:
        config (VectorFieldModelConfig): the config

    Returns:
        the parameter count
    '''
    d, f = config.d_model, config.d_ffn
    total = (config.d_feat + config.cond_dim) * d + d  # input projection
    total += 1  # time embedding scale
    total += d * (d // config.conv_pos_groups) * config.conv_pos_kernel + d

    block = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
    total += config.n_layers * block

    if config.use_skip_connections:
        total += (config.n_layers // 2) * (2 * d * d + d)

    total += 2 * d  # final norm
    total += d * config.d_feat + config.d_feat  # output head

    if config.symbol_vocab_size is not None:
        total += config.symbol_vocab_size * d + 1

    if config.lora_rank is not None:
        total += config.n_layers * len(LORA_TARGET_MODULES) * (
            2 * config.lora_rank * d)

    return total


def save_checkpoint(model, path, step=0, optimizer=None, extra=None):
    '''Writes a model checkpoint.

    The archive stores a format version, the model config as JSON, the
    float32 parameters named by module path, the training step, and
    optionally optimizer state and extra JSON-compatible metadata.

    Args:
        model (VectorFieldModel): the model
        path (str): the output path
        step (int, optional): the training step
        optimizer (torch.optim.Optimizer, optional): an optimizer whose state
            to store
        extra (dict, optional): extra metadata
    '''
    state = OrderedDict(
        (name, tensor.detach().cpu().float())
        for name, tensor in model.state_dict().items())
    archive = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.model_config.to_str(),
        "state": state,
        "step": int(step),
        "optimizer": optimizer.state_dict() if optimizer else None,
        "extra": mfu.json_to_str(extra or {}),
    }
    mfu.ensure_basedir(path)
    torch.save(archive, path)
    logger.info("Checkpoint for step %d written to '%s'", step, path)


class Checkpoint(object):
    '''A loaded checkpoint.

    Attributes:
        model (VectorFieldModel): the model
        step (int): the training step
        optimizer_state (dict): the stored optimizer state, if any
        extra (dict): the stored metadata
    '''

    def __init__(self, model, step=0, optimizer_state=None, extra=None):
        self.model = model
        self.step = step
        self.optimizer_state = optimizer_state
        self.extra = extra or {}


def load_checkpoint(path, device="cpu"):
    '''Loads a checkpoint written by :func:`save_checkpoint`.

    Args:
        path (str): the checkpoint path
        device (str, optional): the device on which to place the model

    Returns:
        a :class:`Checkpoint`

    Raises:
        :class:`ModelError` if the checkpoint is malformed
    '''
    try:
        archive = torch.load(path, map_location=device, weights_only=True)
    except (OSError, RuntimeError) as e:
        raise ModelError("Unable to load checkpoint '%s': %s" % (path, e))

    version = archive.get("format_version", None)
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ModelError(
            "Unsupported checkpoint format version %s in '%s'"
            % (version, path))

    config = VectorFieldModelConfig.from_str(archive["config"])
    model = VectorFieldModel(config).to(device)
    try:
        model.load_state_dict(archive["state"])
    except RuntimeError as e:
        raise ModelError("Checkpoint '%s' does not match its config: %s" % (
            path, e))

    return Checkpoint(
        model, step=archive.get("step", 0),
        optimizer_state=archive.get("optimizer", None),
        extra=mfu.load_json(archive.get("extra", "{}")))


class ModelError(Exception):
    '''Exception raised when the vector field model receives invalid inputs
    or configuration.
    '''
    pass
