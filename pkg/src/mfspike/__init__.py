"""Mean-field spiking dynamics with synchronous blowups.

Modules: ``model`` (constants, delay laws, initial data), ``fpt``
(first-passage kernels), ``buffer`` (rate-conserving regularization),
``timechange`` (the fixed-point solver), ``particles`` (finite-size Monte
Carlo), ``cli`` (experiment harness).
"""

__version__ = "0.1.0"
