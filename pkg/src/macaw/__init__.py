"""Causal normalizing flows with causally masked conditioners.

The public surface is re-exported here; see the submodules for details.
"""
from .errors import *  # noqa: F401,F403
from .graph import (CausalDag, MaskSet, build_masks, build_masks_for_width, dag_from_edges,
                    descendants, load_graph, validate_dag)
from .conditioner import CMade, conditioner_backward, conditioner_forward, init_cmade
from .priors import Prior
from .flow import MacawModel, build_model, forward, inverse, inverse_clamped, log_prob
from .trainer import TrainConfig, TrainReport, grad_check, nll_and_grad, nll_loss, train
from .queries import (ClassTask, GroupedModel, classify, counterfactual, grouped_counterfactual,
                      grouped_sample, intervene_sample, map_estimate, sample)
from .codec import KernelParams, LatentCodec, decode, encode, fit_kpca
from .datasets import (ImageGenSpec, gen_images, gen_scm, image_counterfactual_oracle,
                       scm_counterfactual_oracle)
from .evalkit import (GaussianStats, cf_residuals, effectiveness, fit_probe, frechet_distance,
                      moment_report)
from .persistence import load_model, save_model

__version__ = "0.1.0"
