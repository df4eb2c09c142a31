from claip_emo.numerics.tensor import (
    Tape, Tensor, backward, current_tape, default_dtype, get_default_dtype, set_default_dtype)
from claip_emo.numerics.module import LayerNorm, Linear, Module, Parameter, trunc_normal
