from .layers import LayerSpec, sigmoid
from .network import Network, backprop, forward
from .losses import loss_and_grad, per_sample_loss, soft_dice
from .optim import OptimizerState, optimizer_step
from .gradcheck import GradientCheckReport, gradient_check
from .checkpoint import load_checkpoint, save_checkpoint
