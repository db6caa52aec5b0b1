"""Single-NIR-image surface-normal estimation toolkit.

Synthetic Lambertian data generation, adversarial training with
photometric objectives, evaluation metrics, and normal-to-depth/mesh
reconstruction, all on a small numpy tensor engine with numba-accelerated
kernels.
"""

from .tensor import Tensor, ShapeError, GraphError, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "GraphError", "no_grad", "__version__"]
