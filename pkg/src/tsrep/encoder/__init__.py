from .model import Encoder, EncoderOutput, build_encoder, count_parameters, encode
from .ssm import S4Block, S4DLayer

__all__ = ["Encoder", "EncoderOutput", "build_encoder", "count_parameters", "encode", "S4Block", "S4DLayer"]
