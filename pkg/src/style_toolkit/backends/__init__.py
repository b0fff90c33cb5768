from .base import BackendBundle, ImageTensor, JointEmbedding, ManipulationBackend, unit
from .config import load_backend, register_backend_kind
from .toy import QuadraticSurrogateBackend, ToyLinearBackend

__all__ = [
    "BackendBundle",
    "ImageTensor",
    "JointEmbedding",
    "ManipulationBackend",
    "QuadraticSurrogateBackend",
    "ToyLinearBackend",
    "load_backend",
    "register_backend_kind",
    "unit",
]
