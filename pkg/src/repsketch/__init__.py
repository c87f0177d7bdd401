"""Representer sketches: distill a model into a weighted LSH kernel sum and
answer queries from a compact count sketch."""

from .errors import (ConfigError, FormatError, IncompatibleSketchError, InputError, ParseError,
                     RepSketchError, TrainingError)
from .lsh import Family, LshEnsemble, LshEnsembleSpec, LshFamilyConfig, collision_probability
from .kde import KernelConfig, WeightedPoint, exact_root_kde, exact_weighted_kde
from .sketch import RepresenterSketch, build, add, merge, query_mean, query_mom, serialize, deserialize
from .distill import DistillConfig, KernelModel, Task, train, predict, to_sketch

__version__ = "0.1.0"
