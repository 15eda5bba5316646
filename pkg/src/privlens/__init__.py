"""Learned privacy-preserving lens for action recognition on synthetic video.

A Zernike phase mask shapes the camera PSF; the mask, an action classifier
and an attribute adversary are trained against each other so that captured
clips stay useful for recognising the action but not the private attributes.
"""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a file shipped in ``privlens/data``."""
    return resources.files(__name__).joinpath("data", name)


def hardware_coefficients():
    """The measured 15-term coefficient fixture."""
    from .io import read_coefficients

    return read_coefficients(data_path("hardware_q15.coef"))
