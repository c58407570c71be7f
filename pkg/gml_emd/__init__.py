"""
GML-EMD - learning the ground metric of transportation distances from labeled histograms.
"""

__version__ = "0.1.0"

from .models import (ALL, DescentResult, DescentTrace, GmlParams, LabeledDataset, SolveResult,
                     SynthConfig, TrainingSet, TransportPlan)
from .transport import emd, solve_transport
from .metric import project_feasible, triangle_fix, uniform_metric
from .criterion import eval_Ck, eval_S, normalize_weights
from .optimizer import gml_descent, initial_point
from .experiment import GroundMetricExperiment

__all__ = ['ALL', 'DescentResult', 'DescentTrace', 'GmlParams', 'GroundMetricExperiment',
           'LabeledDataset', 'SolveResult', 'SynthConfig', 'TrainingSet', 'TransportPlan',
           'emd', 'eval_Ck', 'eval_S', 'gml_descent', 'initial_point', 'normalize_weights',
           'project_feasible', 'solve_transport', 'triangle_fix', 'uniform_metric']
