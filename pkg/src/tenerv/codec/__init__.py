"""Quantization, entropy coding, and the ``.tnrv`` container.

The container lives in :mod:`tenerv.codec.bitstream`; it is not imported here
because it depends on the model module, which itself uses the quantizer.
"""
from .quant import QuantizedTensor, dequantize, fake_quantize, quantize
from .rangecoder import entropy_decode, entropy_encode

__all__ = [
    "QuantizedTensor",
    "dequantize",
    "entropy_decode",
    "entropy_encode",
    "fake_quantize",
    "quantize",
]
