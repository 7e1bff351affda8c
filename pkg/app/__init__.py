"""Classical simulation of partially entangled two-qubit correlations with one M-box and one PR-box."""
