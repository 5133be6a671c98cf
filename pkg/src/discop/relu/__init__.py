"""ReLU network building blocks and their compiler."""
from .mlp import MLP, Layer, compose, eval_mlp, parallel, affine, identity
from .circuit import Circuit, Lin, const
from .blocks import (
    build_indicator, build_maxpool, build_multiply, build_partition, build_step,
)
from .analytic import AnalyticApprox, compile_analytic, plan_analytic
from .analytic import Divider, build_divide
from .angle import AngleRecovery, build_angle_recovery
from .mlp import mlp_from_bytes, mlp_from_json, mlp_to_bytes, mlp_to_json


def account_size(net) -> dict:
    """Depth, width and size of an MLP or operator model."""
    if isinstance(net, MLP):
        return {"depth": net.depth, "width": net.width, "size": net.size}
    return net.account()
