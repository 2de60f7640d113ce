from .stances import Stance, LabelSpace, BINARY, TERNARY
from .surveys import Dataset, UnitProfile, Question, Group, load_dataset, recode_dataset, invert_answers
from .splits import Split, split_topic_stratified, split_random, split_fixed_external
from .schema import parse, render
from .rewards import RewardWeights, total_reward
from .policies import Responder, PolicyContract, ToyTabularPolicy, ToyFeaturizedPolicy, make_policy, load_policy
from .sft import ArgumentRecord, SftConfig, build_sft_corpus, sft_train
from .grpo import GrpoConfig, TrainLog, grpo_train, compute_advantages
from .metrics import RunScores, macro_f1, accuracy, evaluate_unit
from .baselines import MajorityResponder, RandomResponder, IclResponder
from .stats import significance_report, regress_vs_neutral_rate
from .space import AnswerMatrix, SpaceModel, fit_space, project
from .config import RunConfig, resolve_config, load_run_matrix
from .storages import ResultStore, LocalFileStorage, GcsStorage
from .alerters import Alerter, StderrAlerter, SlackAlerter
from .errors import StanceAlignError

__all__ = [
    "Stance", "LabelSpace", "BINARY", "TERNARY",
    "Dataset", "UnitProfile", "Question", "Group", "load_dataset", "recode_dataset", "invert_answers",
    "Split", "split_topic_stratified", "split_random", "split_fixed_external",
    "parse", "render",
    "RewardWeights", "total_reward",
    "Responder", "PolicyContract", "ToyTabularPolicy", "ToyFeaturizedPolicy", "make_policy", "load_policy",
    "ArgumentRecord", "SftConfig", "build_sft_corpus", "sft_train",
    "GrpoConfig", "TrainLog", "grpo_train", "compute_advantages",
    "RunScores", "macro_f1", "accuracy", "evaluate_unit",
    "MajorityResponder", "RandomResponder", "IclResponder",
    "significance_report", "regress_vs_neutral_rate",
    "AnswerMatrix", "SpaceModel", "fit_space", "project",
    "RunConfig", "resolve_config", "load_run_matrix",
    "ResultStore", "LocalFileStorage", "GcsStorage",
    "Alerter", "StderrAlerter", "SlackAlerter",
    "StanceAlignError",
]
