from .gradcheck import GradCheckReport, grad_check
from .nn import Gradients, NetParams, backward, forward, init_net, predict
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .tape import Tape, Var

__all__ = [
    "GradCheckReport",
    "Gradients",
    "NetParams",
    "OptimizerState",
    "Rng",
    "Tape",
    "Var",
    "backward",
    "forward",
    "grad_check",
    "init_net",
    "optimizer_step",
    "predict",
]
