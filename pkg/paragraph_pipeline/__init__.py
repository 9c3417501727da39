"""
ParaGraph pipeline: C/OpenMP kernels to weighted program graphs, labeled
datasets and a relational graph-attention runtime predictor.
"""

__version__ = "0.1.0"
