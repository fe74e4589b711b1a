from .core import Tensor, Function, Graph, default_dtype, get_default_dtype, set_default_dtype, resolve_dtype
from .layers import Parameter, Module, Conv2d, ConvStack
from .optim import SGD
from .gradcheck import gradient_check, numerical_gradient
from .checkpoint import save_checkpoint, load_checkpoint
from . import functional
