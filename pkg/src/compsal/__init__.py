"""Competitive saliency maps (Gradient * Input, epsilon-LRP and their
competition-among-labels variants) with sanity-check tooling."""

from .attribution import (CompletenessReport, MapStack, Method, SaliencyMap, attribute, cgi, clrp,
                          completeness_report, grad_input_stack, lrp_stack)
from .data_io import LabeledDataset, load_idx, permute_labels, synthetic_digits
from .nn import (Network, TrainConfig, build_network, cascading_randomize, forward, logit_gradients,
                 randomize_layer, train)

__version__ = "0.1.0"
