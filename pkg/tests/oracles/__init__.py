"""Independent reference computations whose printed output is frozen into the tests.

Each module runs standalone (``python3 -m tests.oracles.<name>``) and uses only
numpy/scipy, never the package under test.
"""
