"""Configuration management for prunekit"""

import os
from typing import Optional, Dict, Any, Tuple
from pathlib import Path
from dataclasses import dataclass, field, asdict
import json
from dotenv import load_dotenv


@dataclass
class ScoringConfig:
    """Dynamic uncertainty and frequency pruning defaults"""
    # DU sliding window (epochs)
    window: int = 10
    short_denominator: bool = False

    # FP bins over the one-sided spectrum; None means floor(K/2)
    fp_lo: int = 1
    fp_hi: Optional[int] = None
    fp_aggregation: str = "sum"

    # Band analysis of training dynamics
    band_low: Tuple[int, int] = (1, 10)
    band_high: Tuple[int, int] = (11, 150)
    band_aggregation: str = "mean"


@dataclass
class ExtrapolationConfig:
    """k-NN score extrapolation defaults"""
    k: int = 35
    metric: str = "cosine"
    batch_size: int = 1024

    # Grid search holdout split
    holdout_fraction: float = 0.1
    holdout_seed: int = 0

    # Warn when merged sources differ in mean score by more than this ratio
    scale_mismatch_ratio: float = 2.0


@dataclass
class PruningConfig:
    """Manifest generation defaults"""
    fraction: float = 0.5
    direction: str = "keep-high"
    balanced: bool = False
    seed: int = 0


@dataclass
class TrainingConfig:
    """Toy trainer defaults"""
    n_per_class: int = 500
    n_classes: int = 2
    dim: int = 2
    separation: float = 3.0
    spread: float = 0.1
    hidden: Tuple[int, ...] = (16,)
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.0
    label_smoothing: float = 0.0
    trades_beta: float = 5.0


@dataclass
class RuntimeConfig:
    """Process-level options"""
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    verbose: bool = False


# Selected (k, metric) per score metric and threat model
EXTRAPOLATION_PRESETS: Dict[str, Dict[str, Any]] = {
    "du-l2": {"k": 35, "metric": "cosine"},
    "fp-l2": {"k": 24, "metric": "euclidean"},
    "du-linf": {"k": 13, "metric": "cosine"},
    "fp-linf": {"k": 12, "metric": "euclidean"},
}

ATTACK_PRESETS: Dict[str, Dict[str, Any]] = {
    "linf": {"norm": "linf", "epsilon": 8 / 255, "step_size": 2 / 255, "iterations": 10},
    "l2": {"norm": "l2", "epsilon": 128 / 255, "step_size": 32 / 255, "iterations": 10},
}


@dataclass
class Config:
    """Main configuration"""
    scoring: ScoringConfig
    extrapolation: ExtrapolationConfig
    pruning: PruningConfig
    training: TrainingConfig
    runtime: RuntimeConfig

    def __init__(self, config_file: Optional[str] = None):
        # Load defaults
        self.scoring = ScoringConfig()
        self.extrapolation = ExtrapolationConfig()
        self.pruning = PruningConfig()
        self.training = TrainingConfig()
        self.runtime = RuntimeConfig()

        # Load from environment
        self._load_from_env()

        # Load from config file if provided
        if config_file:
            self._load_from_file(config_file)

    def _load_from_env(self):
        """Load configuration from environment variables"""
        load_dotenv()

        if os.getenv('PRUNEKIT_THREADS'):
            self.runtime.threads = max(1, int(os.getenv('PRUNEKIT_THREADS')))
        if os.getenv('PRUNEKIT_VERBOSE'):
            self.runtime.verbose = os.getenv('PRUNEKIT_VERBOSE').lower() in ('true', '1', 'yes')

        if os.getenv('PRUNEKIT_WINDOW'):
            self.scoring.window = int(os.getenv('PRUNEKIT_WINDOW'))
        if os.getenv('PRUNEKIT_K'):
            self.extrapolation.k = int(os.getenv('PRUNEKIT_K'))
        if os.getenv('PRUNEKIT_KNN_METRIC'):
            self.extrapolation.metric = os.getenv('PRUNEKIT_KNN_METRIC').lower()

    def _load_from_file(self, config_file: str):
        """Load configuration from JSON file"""
        path = Path(config_file)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {config_file}")

        with open(path, 'r') as f:
            data = json.load(f)

        for section_name in ('scoring', 'extrapolation', 'pruning', 'training', 'runtime'):
            section = getattr(self, section_name)
            for key, value in data.get(section_name, {}).items():
                if hasattr(section, key):
                    # JSON has no tuples
                    if isinstance(getattr(section, key), tuple) and isinstance(value, list):
                        value = tuple(value)
                    setattr(section, key, value)

    def save_to_file(self, config_file: str):
        """Save configuration to JSON file"""
        path = Path(config_file)
        path.parent.mkdir(parents=True, exist_ok=True)

        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, config_file: Optional[str] = None) -> 'Config':
        """Load configuration from file or environment"""
        return cls(config_file)

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {
            'scoring': asdict(self.scoring),
            'extrapolation': asdict(self.extrapolation),
            'pruning': asdict(self.pruning),
            'training': asdict(self.training),
            'runtime': asdict(self.runtime),
        }
