"""Graph convolution in CNN feature space for image deblurring and super-resolution."""

__version__ = "0.1.0"
