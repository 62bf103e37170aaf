"""Meta-learned adversarial feature synthesis for zero-shot classification.

The public surface: a tiny autodiff engine (`Tensor`, `Tape`, ops), the
four networks and their presets, the episodic task sampler, the
first-order meta-trainer, downstream synthesis/evaluation, dataset
bundles with their binary formats, and a scikit-learn style facade
(`ZeroShotMetaLearner`).
"""

import os as _os

# Cap BLAS thread pools before numpy first loads: single-threaded kernels
# keep training runs bit-deterministic. Explicitly-set vars win.
_threads = _os.environ.get("ZSML_THREADS", "1")
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    _os.environ.setdefault(_var, _threads)

from .autodiff import Rng, Tape, Tensor, backward, gaussian_sample
from .classifiers import LinearSVM, SoftmaxClassifier, train_linear_svm
from .data import (
    DatasetBundle,
    SyntheticSpec,
    fewshot_subsample,
    gen_synthetic,
    load_zsb,
    save_zsb,
)
from .downstream import (
    EvalReport,
    SynthesisSpec,
    eval_gzsl,
    eval_zsl,
    fit_eval_classifier,
    harmonic_mean,
    predict,
    synthesize,
)
from .episodes import EpisodeSpec, TaskEpisode, sample_episode, sample_task_batch
from .errors import ZsmlError
from .estimator import ZeroShotMetaLearner
from .nets import NetConfig, NetParams, init_params
from .training import (
    HyperParams,
    ModelSpec,
    ModelState,
    critic_loss,
    gen_cls_loss,
    inner_adapt,
    meta_update,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "Tape",
    "Tensor",
    "backward",
    "gaussian_sample",
    "LinearSVM",
    "SoftmaxClassifier",
    "train_linear_svm",
    "DatasetBundle",
    "SyntheticSpec",
    "fewshot_subsample",
    "gen_synthetic",
    "load_zsb",
    "save_zsb",
    "EvalReport",
    "SynthesisSpec",
    "eval_gzsl",
    "eval_zsl",
    "fit_eval_classifier",
    "harmonic_mean",
    "predict",
    "synthesize",
    "EpisodeSpec",
    "TaskEpisode",
    "sample_episode",
    "sample_task_batch",
    "ZsmlError",
    "ZeroShotMetaLearner",
    "NetConfig",
    "NetParams",
    "init_params",
    "HyperParams",
    "ModelSpec",
    "ModelState",
    "critic_loss",
    "gen_cls_loss",
    "inner_adapt",
    "meta_update",
    "train_loop",
    "__version__",
]
