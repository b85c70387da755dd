"""Universal rain-removal attack toolkit.

Pipeline: synthesize rainy/clean pairs, train a compact deraining network,
train a generator whose single flow-field warp degrades that network, then
evaluate the damage with SSIM/PSNR and detector-based perception metrics.
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
