"""Desk-scale one-shot coverage and capacity optimization (CCO).

Submodules
----------
netsim        deterministic cellular simulator (pathloss, antenna gain, RSRP/SINR)
scenario      randomized network generation and task sets
graphdistill  cell graph and fixed-shape local tensors
reward        global/cell rewards and the best-record store
neural        residual CNN policy with hand-written backprop
optimize      SA multi-shot, supervised training and S2C self-play
evaluate      one-shot evaluation, transfer and reports
cli           ``cco`` command line
"""
from .netsim import (ActionVector, CellConfig, NetworkState, PropagationModel, UserEquipment,
                     apply_action, compute_measurements, model_a, model_b)
from .reward import BestRecordStore, RewardWeights, global_reward, cell_reward
from .graphdistill import ChannelRegistry, LocalTensor, build_graph, distill, select_fov
from .neural import NetConfig, PolicyNetwork, checkpoint_load, checkpoint_save
from .optimize import (SAConfig, SelfPlayConfig, s2c_train, sa_optimize, train_supervised)
from .evaluate import EvalReport, evaluate_one_shot, transfer_eval
from .config import Config

__version__ = "0.1.0"
