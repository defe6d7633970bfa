"""Deterministic DC microgrid co-simulation with spiking-network remote-state estimators.

Subpackages and modules:

* ``grid``      averaged converter / line / load models and the fixed-step solver
* ``control``   droop plus distributed secondary control (observer, PI, sharing)
* ``codec``     event detection, capture/hold, place-code encoder and rate decoder
* ``snn``       spike-response network, STDP
* ``training``  surrogate-gradient offline training
* ``energy``    operation counts and energy for SNN / RNN / ANN estimators
* ``modelio``   binary model files
* ``scenario``  configs, case presets, runs, datasets, metrics
"""

__version__ = "0.1.0"
