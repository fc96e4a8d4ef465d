"""qa_trainer: fine-tuning harness for extractive QA on canonical dataset files."""

__version__ = "0.1.0"

from .data import QaExample, build_features, read_canonical
from .train import TrainerConfig, train_and_predict
