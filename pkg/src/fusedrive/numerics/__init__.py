from .attention import (
    AttentionShape,
    deform_attn_backward,
    deform_attn_forward,
    deformable_attention,
    init_deformable_attention,
    init_mha,
    mha_backward,
    mha_forward,
    multi_head_self_attention,
)
from .checkpoint import checksum, load_params, params_from_json, params_to_json, save_params
from .core import (
    Params,
    accumulate,
    graft,
    layer_norm_backward,
    layer_norm_forward,
    softmax,
    softmax_backward,
    subtree,
    uniform_init,
)
from .gradcheck import check_param_grads, grad_check, numerical_gradient, relative_error
from .mlp import MLPSpec, init_mlp, mlp_backward, mlp_forward
from .sampling import bilinear_sample

__all__ = [
    "AttentionShape", "MLPSpec", "Params", "accumulate", "bilinear_sample", "check_param_grads",
    "checksum", "deform_attn_backward", "deform_attn_forward", "deformable_attention", "graft",
    "grad_check", "init_deformable_attention", "init_mha", "init_mlp", "layer_norm_backward",
    "layer_norm_forward", "load_params", "mha_backward", "mha_forward", "mlp_backward",
    "mlp_forward", "multi_head_self_attention", "numerical_gradient", "params_from_json",
    "params_to_json", "relative_error", "save_params", "softmax", "softmax_backward", "subtree",
    "uniform_init",
]
