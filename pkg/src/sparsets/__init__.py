"""Sparse deep learning for time series: masked RNN/MLP forecasters trained
with a mixture Gaussian prior under annealing, plus order selection and
prediction intervals."""

__version__ = "0.1.0"
