"""Influence functions for unsupervised models: k-NN, KDE, WS-GMM and VAE-TracIn."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DataLengthError,
    DegenerateInputError,
    FitError,
    FormatError,
    InfluenceError,
    NumericError,
    ParseError,
    SingularityError,
    ValidationError,
)
from .datakit import ClusterSpec, Dataset, generate_clusters, generate_uniform, inject_outliers, load_dataset  # noqa: E402
from .density import KdeEstimator, KnnEstimator, WSGMMModel, wsgmm_fit  # noqa: E402
from .influence_classical import if_kde, if_knn, if_wsgmm, loo_oracle  # noqa: E402
from .neuralvae import Checkpoint, TrainConfig, VAEArch, load_run, train  # noqa: E402
from .tracin import ScoreConfig, empirical_if, score_matrix, self_influences, vae_tracin  # noqa: E402
from .evaluation import detection_curve, sanity_self_top1, selfinf_loss_regression  # noqa: E402
