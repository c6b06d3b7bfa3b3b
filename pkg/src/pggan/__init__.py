"""Image inpainting GAN with a dilated residual generator and a shared-trunk patch + global discriminator.

Built on a small numpy reverse-mode autodiff engine (:mod:`pggan.tensor`, :mod:`pggan.ops`).
"""

from .tensor import GradTape, Parameter, Tensor, TapeError, backward, no_grad

__version__ = "0.1.0"

__all__ = ["GradTape", "Parameter", "Tensor", "TapeError", "backward", "no_grad", "__version__"]
