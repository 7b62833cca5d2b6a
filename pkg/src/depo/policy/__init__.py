"""Token-level policy: architecture, exact log-probabilities, sampling, io."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .encoding import (ACTION_ARITY, encode_agent_step, encode_history, encode_step,
                       encode_trajectory_rows, parse_step_tokens)
from .model import PolicyConfig, PolicyModel, log_softmax, softmax
from .ops import (kl_to_reference, logprob_gradient, sample_step, step_logprob,
                  validate_step_output)

__all__ = [
    "ACTION_ARITY", "CheckpointError", "PolicyConfig", "PolicyModel",
    "encode_agent_step", "encode_history", "encode_step", "encode_trajectory_rows",
    "kl_to_reference", "load_checkpoint", "log_softmax", "logprob_gradient",
    "parse_step_tokens", "sample_step", "save_checkpoint", "softmax",
    "step_logprob", "validate_step_output",
]
