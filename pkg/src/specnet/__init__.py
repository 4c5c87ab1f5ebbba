"""VOC identification and quantification from 622-channel IR absorption spectra."""

from .analysis import (
    MetricReport,
    SaliencyMap,
    SignificanceMatrix,
    abs_cam,
    accuracy,
    dunn_posthoc,
    kruskal_wallis,
    mse,
    r2_score,
)
from .augmentation import (
    AUGMENT_GRID,
    AugmentPlan,
    oversample_epoch,
    synthetic_epoch,
    train_enhanced,
    train_fold_cvaes,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .cvae import (
    CvaeModel,
    build_cvae,
    cvae_loss,
    decode,
    encode,
    generate,
    kl_divergence,
    reparameterize,
    train_cvae,
)
from .datasets import (
    Corpus,
    CorpusRecipe,
    PeakTemplate,
    Spectrum,
    VocClass,
    balanced_recipe,
    build_corpus,
    cell_concentration,
    channel_grid,
    conversion_factor,
    default_template,
    kfold_split,
    one_hot,
    read_spectra_csv,
    regression_target,
    starved_recipe,
    synth_spectrum,
    write_spectra_csv,
)
from .discriminator import (
    DiscriminatorModel,
    Prediction,
    build_discriminator,
    forward,
    loss,
    predict,
    train,
    train_folds,
)
from .training import TrainConfig, TrainingDivergedError

__version__ = "0.1.0"
